use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_rate, Encoding, Readout, SnnNetwork, SpikeTrain, SURROGATE_BETA};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, Parameterized, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnnLoss {
    #[default]
    CrossEntropy,
    Mse,
}

/// Weighting of the spiking term in `L = L_quantile + λ · L_snn`.
///
/// The quantile network stays frozen while the spiking stage trains, so λ
/// scales only the reported joint objective; the spiking parameters descend
/// `L_snn` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLossConfig {
    pub lambda: f64,
    pub snn_loss: SnnLoss,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            snn_loss: SnnLoss::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Probability of deleting each encoded input spike during training.
    pub spike_dropout: f64,
    pub tau: f64,
    pub gain: f64,
    pub encoding: Encoding,
    pub joint: JointLossConfig,
    pub seed: u64,
}

impl Default for SnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                schedule: StepSchedule { factor: 0.5, every: 50 },
                ..AdamWConfig::default()
            },
            spike_dropout: 0.1,
            tau: 0.0,
            gain: 1.0,
            encoding: Encoding::Bernoulli,
            joint: JointLossConfig::default(),
            seed: 43,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnnEpoch {
    pub epoch: usize,
    pub loss_snn: f64,
    pub loss_joint: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnnTrainHistory {
    pub records: Vec<SnnEpoch>,
}

impl SnnTrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss_snn,loss_joint,accuracy,lr")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.loss_snn, r.loss_joint, r.accuracy, r.lr)?;
        }
        Ok(())
    }
}

/// Spike nonlinearity used in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SpikeFn {
    Heaviside,
    /// `1/2 + x / (1 + β|x|)`, whose derivative is exactly the surrogate.
    Smooth,
}

pub(crate) fn surrogate(x: f64) -> f64 {
    let d = 1.0 + SURROGATE_BETA * x.abs();
    1.0 / (d * d)
}

impl SpikeFn {
    fn apply(self, x: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => (x >= 0.0) as u8 as f64,
            SpikeFn::Smooth => 0.5 + x / (1.0 + SURROGATE_BETA * x.abs()),
        }
    }
}

/// Per-layer pre-reset potentials and outputs, row-major `steps x n`.
pub(crate) struct Trace {
    vpre: [Vec<f64>; 2],
    s: [Vec<f64>; 2],
    counts: Vec<f64>,
    pub z: f64,
    pub score: f64,
}

pub(crate) fn forward_trace(net: &SnnNetwork, input: &SpikeTrain, f: SpikeFn) -> Result<Trace> {
    net.check(input)?;
    let n = net.hidden();
    let p = &net.lif;
    let a = p.alpha();
    let steps = input.steps;
    let mut vpre = [vec![0.0; steps * n], vec![0.0; steps * n]];
    let mut s = [vec![0.0; steps * n], vec![0.0; steps * n]];
    let mut v = [vec![p.v_rest; n], vec![p.v_rest; n]];
    let mut cur = vec![0.0; n];
    let mut up: Vec<f64> = Vec::with_capacity(n.max(input.channels));
    for t in 0..steps {
        up.clear();
        up.extend(input.row(t).iter().map(|&x| x as f64));
        for l in 0..2 {
            net.layers[l].current(&up, &mut cur);
            let off = t * n;
            for k in 0..n {
                let pre = v[l][k] + a * (-(v[l][k] - p.v_rest) + p.r_m * cur[k]);
                if !pre.is_finite() {
                    return Err(Error::Numeric(format!("layer {} neuron {k} potential is not finite", l + 1)));
                }
                let sk = f.apply(pre - p.v_th);
                vpre[l][off + k] = pre;
                s[l][off + k] = sk;
                v[l][k] = pre * (1.0 - sk) + p.v_reset * sk;
            }
            up.clear();
            up.extend_from_slice(&s[l][off..off + n]);
        }
    }
    let mut counts = vec![0.0; n];
    for t in 0..steps {
        for k in 0..n {
            counts[k] += s[1][t * n + k];
        }
    }
    let z = counts.iter().zip(&net.readout_w).map(|(c, w)| c * w).sum::<f64>() + net.readout_b;
    Ok(Trace {
        vpre,
        s,
        counts,
        z,
        score: net.readout.apply(z),
    })
}

/// Flat gradients (visit order) of a loss whose derivative with respect to
/// the readout pre-activation is `dz`.
pub(crate) fn backward_trace(net: &SnnNetwork, input: &SpikeTrain, tr: &Trace, dz: f64) -> Vec<f64> {
    let n = net.hidden();
    let p = &net.lif;
    let a = p.alpha();
    let steps = input.steps;
    let n_in = input.channels;
    let mut dw = [vec![0.0; n_in * n], vec![0.0; n * n]];
    let mut db = [vec![0.0; n], vec![0.0; n]];
    let d_ro_w: Vec<f64> = tr.counts.iter().map(|c| c * dz).collect();

    // gradient reaching each layer's spikes from above, row-major steps x n
    let mut ext = vec![0.0; steps * n];
    for t in 0..steps {
        for k in 0..n {
            ext[t * n + k] = dz * net.readout_w[k];
        }
    }
    let mut dinput_layer1 = vec![0.0; steps * n];
    for l in (0..2).rev() {
        let layer = &net.layers[l];
        let in_dim = layer.n_in;
        let mut gv = vec![0.0; n];
        let mut di = vec![0.0; n];
        for t in (0..steps).rev() {
            let off = t * n;
            for k in 0..n {
                let pre = tr.vpre[l][off + k];
                let sk = tr.s[l][off + k];
                let ds = ext[off + k] + gv[k] * (p.v_reset - pre);
                let dvpre = gv[k] * (1.0 - sk) + ds * surrogate(pre - p.v_th);
                di[k] = dvpre * a * p.r_m;
                gv[k] = dvpre * (1.0 - a);
            }
            for k in 0..n {
                db[l][k] += di[k];
            }
            for i in 0..in_dim {
                let up = if l == 0 { input.get(t, i) as f64 } else { tr.s[0][off + i] };
                if up != 0.0 {
                    let row = &mut dw[l][i * n..(i + 1) * n];
                    for (g, &d) in row.iter_mut().zip(&di) {
                        *g += up * d;
                    }
                }
                if l == 1 {
                    let wrow = &layer.w[i * n..(i + 1) * n];
                    dinput_layer1[off + i] = wrow.iter().zip(&di).map(|(w, d)| w * d).sum();
                }
            }
        }
        if l == 1 {
            std::mem::swap(&mut ext, &mut dinput_layer1);
        }
    }
    let mut flat = Vec::with_capacity(net.n_params());
    for l in 0..2 {
        flat.extend_from_slice(&dw[l]);
        flat.extend_from_slice(&db[l]);
    }
    flat.extend(d_ro_w);
    flat.push(dz);
    flat
}

/// Loss of `net` on one sample under the smooth spike function whose exact
/// derivative is the surrogate. Used to verify [`smooth_loss_gradients`].
pub fn smooth_loss(net: &SnnNetwork, input: &SpikeTrain, kind: SnnLoss, y: f64) -> Result<f64> {
    let tr = forward_trace(net, input, SpikeFn::Smooth)?;
    Ok(score_loss(net.readout, kind, tr.z, y).0)
}

/// Surrogate-gradient backward pass on the smooth forward pass; flat
/// parameter order as in `flat_params`.
pub fn smooth_loss_gradients(net: &SnnNetwork, input: &SpikeTrain, kind: SnnLoss, y: f64) -> Result<Vec<f64>> {
    let tr = forward_trace(net, input, SpikeFn::Smooth)?;
    let (_, dz) = score_loss(net.readout, kind, tr.z, y);
    Ok(backward_trace(net, input, &tr, dz))
}

/// Loss of one score against a label and its derivative in the readout
/// pre-activation.
pub(crate) fn score_loss(readout: Readout, kind: SnnLoss, z: f64, y: f64) -> (f64, f64) {
    match kind {
        SnnLoss::CrossEntropy => {
            // softplus form keeps large |z| finite
            let sp = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            (y * sp(-z) + (1.0 - y) * sp(z), crate::nn::sigmoid(z) - y)
        }
        SnnLoss::Mse => {
            let a = readout.apply(z);
            ((a - y).powi(2), 2.0 * (a - y) * readout.derivative(z))
        }
    }
}

fn item_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    r.set_stream(item as u64);
    r
}

/// Encodes one sample, deleting spikes with probability `dropout`.
pub fn encode_sample(values: &[f64], cfg: &SnnTrainConfig, t_sim: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Result<SpikeTrain> {
    let mut train = encode_rate(values, cfg.tau, cfg.gain, t_sim, cfg.encoding, rng)?;
    if dropout > 0.0 {
        for s in train.spikes.iter_mut() {
            if *s == 1 && rng.random::<f64>() < dropout {
                *s = 0;
            }
        }
    }
    Ok(train)
}

/// Trains the spiking stage on per-sample input vectors and binary labels.
///
/// `quantile_loss` is the (frozen) quantile-network objective, reported in the
/// joint loss only.
pub fn train_snn(
    net: &mut SnnNetwork,
    inputs: &[Vec<f64>],
    labels: &[f64],
    cfg: &SnnTrainConfig,
    quantile_loss: f64,
) -> Result<SnnTrainHistory> {
    if inputs.len() != labels.len() {
        return Err(Error::shape("SNN labels", inputs.len(), labels.len()));
    }
    if inputs.is_empty() {
        return Err(Error::insufficient("SNN training samples", 1, 0));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != net.n_in()) {
        return Err(Error::shape("SNN sample width", net.n_in(), bad.len()));
    }
    if !(0.0..1.0).contains(&cfg.spike_dropout) || cfg.batch_size == 0 || cfg.joint.lambda < 0.0 {
        return Err(Error::validation("spike dropout must be in [0, 1), batch positive, lambda >= 0"));
    }
    if cfg.joint.snn_loss == SnnLoss::CrossEntropy && net.readout != Readout::Sigmoid {
        return Err(Error::validation("cross-entropy needs a sigmoid readout"));
    }
    let mut opt = AdamW::new(cfg.optimizer, net.n_params())?;
    let decay = net.decay_mask();
    let mut params = net.flat_params();
    let mut last_good = params.clone();
    let mut history = SnnTrainHistory::default();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_sim = net.lif.t_sim;
    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let snapshot: &SnnNetwork = net;
            let per_item: Vec<Result<(f64, bool, Vec<f64>)>> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = item_rng(cfg.seed, epoch, i);
                    let x = encode_sample(&inputs[i], cfg, t_sim, cfg.spike_dropout, &mut rng)?;
                    let tr = forward_trace(snapshot, &x, SpikeFn::Heaviside)?;
                    let (l, dz) = score_loss(snapshot.readout, cfg.joint.snn_loss, tr.z, labels[i]);
                    let hit = (tr.score >= 0.5) == (labels[i] >= 0.5);
                    Ok((l, hit, backward_trace(snapshot, &x, &tr, dz / chunk.len() as f64)))
                })
                .collect();
            let mut grads = vec![0.0; params.len()];
            for r in per_item {
                let (l, hit, g) = r?;
                loss_sum += l;
                correct += hit as usize;
                for (a, b) in grads.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            if let Err(e) = opt.update(&mut params, &grads, &decay) {
                net.set_flat_params(&last_good)?;
                return Err(e);
            }
            net.set_flat_params(&params)?;
        }
        let loss_snn = loss_sum / inputs.len() as f64;
        if !loss_snn.is_finite() {
            net.set_flat_params(&last_good)?;
            return Err(Error::Numeric(format!("spiking loss diverged at epoch {epoch}")));
        }
        last_good.clone_from(&params);
        history.records.push(SnnEpoch {
            epoch,
            loss_snn,
            loss_joint: quantile_loss + cfg.joint.lambda * loss_snn,
            accuracy: correct as f64 / inputs.len() as f64,
            lr: opt.lr,
        });
    }
    Ok(history)
}

/// Scores each sample with a fresh encoding stream per sample.
pub fn score_samples(net: &SnnNetwork, inputs: &[Vec<f64>], cfg: &SnnTrainConfig, seed: u64) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = item_rng(seed, usize::MAX, i);
            let s = encode_sample(x, cfg, net.lif.t_sim, 0.0, &mut rng)?;
            Ok(net.run(&s)?.score)
        })
        .collect()
}
