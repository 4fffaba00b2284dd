use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GatedAttention, HistoryBuffer, StepCache};
use crate::beqrnn::{EarlyStopping, QuantileNetwork};
use crate::error::{Error, Result};
use crate::nn::{pinball_grad, AdamW, AdamWConfig, Parameterized, StepSchedule};

/// Bottleneck states of one contiguous run and the decoder-space target for
/// each step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub states: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Use every `stride`-th step as a training sample.
    pub stride: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            patience: 6,
            stride: 1,
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                schedule: StepSchedule { factor: 0.5, every: 20 },
                ..AdamWConfig::default()
            },
            seed: 31,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionTrainHistory {
    /// `(epoch, loss_train, loss_val)`.
    pub records: Vec<(usize, f64, f64)>,
    pub best_epoch: usize,
}

fn validate(seqs: &[StateSequence], d_model: usize, out: usize, what: &str) -> Result<()> {
    if seqs.is_empty() {
        return Err(Error::insufficient(format!("{what} sequences"), 1, 0));
    }
    for s in seqs {
        if s.states.ncols() != d_model {
            return Err(Error::shape(format!("{what} state width"), d_model, s.states.ncols()));
        }
        if s.targets.dim() != (s.states.nrows(), out) {
            return Err(Error::shape(format!("{what} target rows"), s.states.nrows(), s.targets.nrows()));
        }
    }
    Ok(())
}

fn history_at(att: &GatedAttention, seq: &StateSequence, t: usize) -> Result<HistoryBuffer> {
    let mut h = att.history();
    let start = t.saturating_sub(h.capacity());
    for k in start..t {
        h.push(seq.states.row(k).as_slice().expect("standard layout"))?;
    }
    Ok(h)
}

/// Median-head pinball loss of the decoded gated states; optionally the
/// flat parameter gradient of the batch mean.
fn batch(
    att: &GatedAttention,
    net: &QuantileNetwork,
    level: usize,
    seqs: &[StateSequence],
    items: &[(usize, usize)],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let d = att.d_model();
    let mut outs = Array2::zeros((items.len(), d));
    let mut caches: Vec<StepCache> = Vec::with_capacity(items.len());
    for (r, &(s, t)) in items.iter().enumerate() {
        let hist = history_at(att, &seqs[s], t)?;
        let (step, cache) = att.step_cached(seqs[s].states.row(t), &hist, None)?;
        outs.row_mut(r).assign(&step.output);
        caches.push(cache);
    }
    let (q, dec_cache) = net.decode_level(outs.view(), level)?;
    let out_dim = q.ncols();
    let norm = (items.len() * out_dim) as f64;
    let mut loss = 0.0;
    let mut dq = Array2::zeros(q.dim());
    for (r, &(s, t)) in items.iter().enumerate() {
        let y = seqs[s].targets.row(t);
        for c in 0..out_dim {
            let res = y[c] - q[[r, c]];
            loss += (0.5 * res).max(-0.5 * res);
            dq[[r, c]] = pinball_grad(y[c], q[[r, c]], 0.5) / norm;
        }
    }
    loss /= norm;
    if !want_grad {
        return Ok((loss, None));
    }
    let dh = net.decode_level_input_grad(&dec_cache, level, dq.view());
    let mut grads = vec![0.0; att.n_params()];
    for (r, cache) in caches.iter().enumerate() {
        let (g, _) = att.step_backward(cache, dh.row(r));
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, Some(grads)))
}

fn mean_loss(
    att: &GatedAttention,
    net: &QuantileNetwork,
    level: usize,
    seqs: &[StateSequence],
    items: &[(usize, usize)],
) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in items.chunks(256) {
        sum += batch(att, net, level, seqs, chunk, false)?.0 * chunk.len() as f64;
    }
    Ok(sum / items.len().max(1) as f64)
}

fn sample_items(seqs: &[StateSequence], stride: usize) -> Vec<(usize, usize)> {
    let mut items = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        // the first step has no history and therefore no trainable path
        items.extend((1..seq.states.nrows()).step_by(stride).map(|t| (s, t)));
    }
    items
}

/// Fits heads and gates with the quantile network frozen, minimizing the
/// median-head pinball loss of the decoded gated state against each target.
pub fn train_attention(
    att: &mut GatedAttention,
    net: &QuantileNetwork,
    train: &[StateSequence],
    val: &[StateSequence],
    cfg: &AttentionTrainConfig,
) -> Result<AttentionTrainHistory> {
    let out = net.topology.output_dim();
    validate(train, att.d_model(), out, "training")?;
    validate(val, att.d_model(), out, "validation")?;
    if net.topology.bottleneck() != att.d_model() {
        return Err(Error::shape("attention width vs bottleneck", net.topology.bottleneck(), att.d_model()));
    }
    if cfg.batch_size == 0 || cfg.stride == 0 {
        return Err(Error::validation("batch size and stride must be positive"));
    }
    let level = net
        .level_index(0.5)
        .ok_or_else(|| Error::validation("quantile network has no median head"))?;
    let mut items = sample_items(train, cfg.stride);
    let val_items = sample_items(val, cfg.stride);
    if items.is_empty() || val_items.is_empty() {
        return Err(Error::insufficient("attention training steps", 1, 0));
    }
    let mut opt = AdamW::new(cfg.optimizer, att.n_params())?;
    let decay = att.decay_mask();
    let mut params = att.flat_params();
    let mut best = params.clone();
    let mut stopper = EarlyStopping::new(cfg.patience, 0.0);
    let mut history = AttentionTrainHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial = mean_loss(att, net, level, val, &val_items)?;
    stopper.observe(0, initial);
    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        items.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in items.chunks(cfg.batch_size) {
            let (l, g) = batch(att, net, level, train, chunk, true)?;
            if !l.is_finite() {
                att.set_flat_params(&best)?;
                return Err(Error::Numeric(format!("attention loss diverged at epoch {epoch}")));
            }
            sum += l * chunk.len() as f64;
            if let Err(e) = opt.update(&mut params, &g.expect("gradient requested"), &decay) {
                att.set_flat_params(&best)?;
                return Err(e);
            }
            att.set_flat_params(&params)?;
        }
        let loss_val = mean_loss(att, net, level, val, &val_items)?;
        history.records.push((epoch + 1, sum / items.len() as f64, loss_val));
        let (improved, stop) = stopper.observe(epoch + 1, loss_val);
        if improved {
            best.clone_from(&params);
        }
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    att.set_flat_params(&best)?;
    Ok(history)
}

/// Runs the module over a whole state sequence; row `t` of the result is the
/// gated state at `t`.
pub fn run_sequence(att: &GatedAttention, states: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<super::AttentionStep>)> {
    let mut hist = att.history();
    let mut out = Array2::zeros(states.dim());
    let mut steps = Vec::with_capacity(states.nrows());
    for (t, row) in states.axis_iter(Axis(0)).enumerate() {
        let step = att.step(row, &hist)?;
        out.row_mut(t).assign(&step.output);
        steps.push(step);
        hist.push(&row.to_vec())?;
    }
    Ok((out, steps))
}
