use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QuantileNetwork;
use crate::error::{Error, Result};
use crate::nn::{delta_from_iqr, AdamW, AdamWConfig, Loss, Mode, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Loss {
    Pinball,
    /// Huber residual with the asymmetric quantile weighting; δ from the residual IQR.
    ModifiedHuber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Minimum validation improvement that resets patience.
    pub min_delta: f64,
    pub loss: Stage1Loss,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Epoch number of the first epoch run; non-zero when resuming.
    pub start_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            patience: 12,
            min_delta: 0.0,
            loss: Stage1Loss::ModifiedHuber,
            optimizer: AdamWConfig::default(),
            seed: 11,
            start_epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_train: f64,
    pub loss_val: f64,
    pub lr: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss_train,loss_val,lr,delta")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.epoch, r.loss_train, r.loss_val, r.lr, r.delta)?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`TrainHistory::write_csv`]. Best epoch and
    /// early-stop state are not stored; the best epoch is recomputed from
    /// the validation column.
    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty history CSV".into()))??;
        if header.trim() != "epoch,loss_train,loss_val,lr,delta" {
            return Err(Error::Parse(format!("unexpected history header `{header}`")));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad history row `{line}`")));
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|e| Error::Parse(format!("history: {e}")));
            records.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|e| Error::Parse(format!("history epoch: {e}")))?,
                loss_train: num(1)?,
                loss_val: num(2)?,
                lr: num(3)?,
                delta: num(4)?,
            });
        }
        let best_epoch = records
            .iter()
            .min_by(|a, b| a.loss_val.total_cmp(&b.loss_val))
            .map_or(0, |r| r.epoch);
        Ok(Self {
            records,
            best_epoch,
            stopped_early: false,
        })
    }
}

/// Patience counter on a validation metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records a validation value; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best - self.min_delta {
            self.best = value;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

fn level_loss(kind: Stage1Loss, alpha: f64, delta: f64) -> Loss {
    match kind {
        Stage1Loss::Pinball => Loss::Pinball { alpha },
        Stage1Loss::ModifiedHuber => Loss::QuantileHuber { alpha, delta },
    }
}

/// Mean loss and per-level output gradients (scaled for the mean).
fn batch_objective(
    alphas: &[f64],
    quantiles: &[Array2<f64>],
    target: ArrayView2<f64>,
    kind: Stage1Loss,
    delta: f64,
) -> (f64, Vec<Array2<f64>>) {
    let n = (target.len() * alphas.len()) as f64;
    let mut total = 0.0;
    let grads = alphas
        .iter()
        .zip(quantiles)
        .map(|(&a, q)| {
            let loss = level_loss(kind, a, delta);
            let mut g = Array2::zeros(q.dim());
            ndarray::Zip::from(&mut g).and(q).and(target).for_each(|g, &q, &y| {
                total += loss.value(y, q);
                *g = loss.grad(y, q) / n;
            });
            g
        })
        .collect();
    (total / n, grads)
}

/// Median-level residuals `y − q₀.₅` (or of the central level if 0.5 is absent).
fn median_residuals(alphas: &[f64], quantiles: &[Array2<f64>], target: ArrayView2<f64>, out: &mut Vec<f64>) {
    let k = alphas
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    out.extend(target.iter().zip(quantiles[k].iter()).map(|(y, q)| y - q));
}

pub(crate) fn evaluate_loss(
    net: &QuantileNetwork,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    kind: Stage1Loss,
    delta: f64,
    batch: usize,
    residuals: Option<&mut Vec<f64>>,
) -> Result<f64> {
    let alphas = net.alphas();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sum = 0.0;
    let mut resid = residuals;
    for start in (0..x.nrows()).step_by(batch.max(1)) {
        let end = (start + batch).min(x.nrows());
        let xb = x.slice(ndarray::s![start..end, ..]);
        let yb = y.slice(ndarray::s![start..end, ..]);
        let pass = net.forward_pass(xb, Mode::Eval, &mut rng)?;
        let (l, _) = batch_objective(&alphas, &pass.quantiles, yb, kind, delta);
        sum += l * (end - start) as f64;
        if let Some(r) = resid.as_deref_mut() {
            median_residuals(&alphas, &pass.quantiles, yb, r);
        }
    }
    Ok(sum / x.nrows().max(1) as f64)
}

fn check_rows(x: ArrayView2<f64>, y: ArrayView2<f64>, net: &QuantileNetwork, what: &str) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape(format!("{what} target rows"), x.nrows(), y.nrows()));
    }
    if y.ncols() != net.topology.output_dim() {
        return Err(Error::shape(format!("{what} target width"), net.topology.output_dim(), y.ncols()));
    }
    if x.nrows() == 0 {
        return Err(Error::insufficient(format!("{what} rows"), 1, 0));
    }
    Ok(())
}

/// Trains trunk and heads jointly with early stopping on validation loss.
///
/// On divergence the best parameters seen so far are restored before the
/// error is returned.
pub fn train_stage1(
    net: &mut QuantileNetwork,
    x_train: ArrayView2<f64>,
    y_train: ArrayView2<f64>,
    x_val: ArrayView2<f64>,
    y_val: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    check_rows(x_train, y_train, net, "training")?;
    check_rows(x_val, y_val, net, "validation")?;
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let alphas = net.alphas();
    let mut opt = AdamW::new(cfg.optimizer, net.n_params())?;
    let decay = net.decay_mask();
    let mut params = net.flat_params();
    let mut best_params = params.clone();
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut history = TrainHistory::default();

    let mut resid = Vec::with_capacity(y_train.len());
    evaluate_loss(net, x_train, y_train, cfg.loss, 1.0, 256, Some(&mut resid))?;
    let mut delta = delta_from_iqr(&resid)?;

    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    shuffle_rng.set_stream(cfg.start_epoch as u64);
    dropout_rng.set_stream(cfg.start_epoch as u64);
    for epoch in cfg.start_epoch..cfg.start_epoch + cfg.epochs {
        opt.set_epoch(epoch);
        order.shuffle(&mut shuffle_rng);
        resid.clear();
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let pass = net.forward_pass(xb.view(), Mode::Train, &mut dropout_rng)?;
            let (l, dq) = batch_objective(&alphas, &pass.quantiles, yb.view(), cfg.loss, delta);
            if !l.is_finite() {
                net.set_flat_params(&best_params)?;
                return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
            }
            median_residuals(&alphas, &pass.quantiles, yb.view(), &mut resid);
            sum += l * chunk.len() as f64;
            let grads = net.backward_pass(&pass, &dq);
            if let Err(e) = opt.update(&mut params, &grads, &decay) {
                net.set_flat_params(&best_params)?;
                return Err(e);
            }
            net.set_flat_params(&params)?;
        }
        let loss_train = sum / x_train.nrows() as f64;
        let loss_val = evaluate_loss(net, x_val, y_val, cfg.loss, delta, 256, None)?;
        if !loss_val.is_finite() {
            net.set_flat_params(&best_params)?;
            return Err(Error::Numeric(format!("validation loss diverged at epoch {epoch}")));
        }
        history.records.push(EpochRecord {
            epoch,
            loss_train,
            loss_val,
            lr: opt.lr,
            delta,
        });
        let (improved, stop) = stopper.observe(epoch, loss_val);
        if improved {
            best_params.clone_from(&params);
        }
        // δ for the next epoch comes from this epoch's residuals
        delta = delta_from_iqr(&resid)?;
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    net.set_flat_params(&best_params)?;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beqrnn::{build, BeqrnnTopology, BuildOptions};
    use rand::Rng;

    #[test]
    fn plateau_stops_after_patience() {
        let mut s = EarlyStopping::new(12, 0.0);
        assert_eq!(s.observe(0, 1.0), (true, false));
        for epoch in 1..12 {
            assert_eq!(s.observe(epoch, 1.0), (false, false), "epoch {epoch}");
        }
        assert_eq!(s.observe(12, 1.0), (false, true));
        assert_eq!(s.best_epoch, 0);
    }

    fn small(dropout: f64) -> QuantileNetwork {
        build(
            &BeqrnnTopology::mirrored(&[4, 16, 8, 4]),
            &BuildOptions {
                alphas: vec![0.1, 0.5, 0.9],
                dropout,
                groups: 2,
                seed: 5,
                allow_custom_topology: true,
                ..BuildOptions::default()
            },
        )
        .unwrap()
    }

    fn linear_data(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 4));
        for mut row in x.rows_mut() {
            let z: f64 = rng.random::<f64>() * 2.0 - 1.0;
            row.assign(&ndarray::arr1(&[z, 2.0 * z, -z, 0.5 * z + 0.1]));
        }
        x
    }

    #[test]
    fn training_loss_decreases_on_noiseless_linear_data() {
        let mut net = small(0.0);
        let x = linear_data(512, 1);
        let xv = linear_data(128, 2);
        let cfg = TrainConfig {
            epochs: 15,
            loss: Stage1Loss::Pinball,
            optimizer: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let h = train_stage1(&mut net, x.view(), x.view(), xv.view(), xv.view(), &cfg).unwrap();
        let losses: Vec<f64> = h.records.iter().map(|r| r.loss_train).collect();
        let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
        let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
        assert!(tail < head, "{losses:?}");
        assert!(losses.last().unwrap() < &(0.5 * losses[0]), "{losses:?}");
    }

    #[test]
    fn deterministic_trajectory() {
        let x = linear_data(200, 3);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = small(0.15);
            let h = train_stage1(&mut net, x.view(), x.view(), x.view(), x.view(), &cfg).unwrap();
            (h, net.flat_params())
        };
        let (ha, pa) = run();
        let (hb, pb) = run();
        assert_eq!(ha, hb);
        assert!(pa.iter().zip(&pb).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ha.records.iter().all(|r| r.delta >= crate::nn::DELTA_MIN));
        let mut csv = Vec::new();
        ha.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("epoch,loss_train,loss_val,lr,delta\n0,"));
    }

    #[test]
    fn lr_follows_schedule() {
        let x = linear_data(64, 4);
        let mut net = small(0.0);
        let cfg = TrainConfig {
            epochs: 82,
            patience: 1000,
            optimizer: AdamWConfig {
                lr: 1e-6,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let h = train_stage1(&mut net, x.view(), x.view(), x.view(), x.view(), &cfg).unwrap();
        assert_eq!(h.records[79].lr, 1e-6);
        assert!((h.records[80].lr - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn resumed_run_continues_epoch_counter() {
        let x = linear_data(128, 5);
        let mut net = small(0.0);
        let first = TrainConfig {
            epochs: 3,
            patience: 100,
            ..TrainConfig::default()
        };
        let h1 = train_stage1(&mut net, x.view(), x.view(), x.view(), x.view(), &first).unwrap();
        let mut resumed = QuantileNetwork::from_checkpoint(&net.to_checkpoint()).unwrap();
        let next = TrainConfig {
            epochs: 2,
            start_epoch: h1.records.last().unwrap().epoch + 1,
            ..first.clone()
        };
        let h2 = train_stage1(&mut resumed, x.view(), x.view(), x.view(), x.view(), &next).unwrap();
        let epochs: Vec<usize> = h1.records.iter().chain(&h2.records).map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_mismatched_rows() {
        let mut net = small(0.0);
        let x = linear_data(10, 1);
        let y = linear_data(9, 1);
        let err = train_stage1(&mut net, x.view(), y.view(), x.view(), x.view(), &TrainConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "shape_mismatch");
    }

    #[test]
    fn divergence_restores_last_good_parameters() {
        let mut net = small(0.0);
        let before = net.flat_params();
        let x = linear_data(64, 1);
        let mut y = x.clone();
        y[[40, 2]] = f64::NAN;
        let err = train_stage1(&mut net, x.view(), y.view(), x.view(), x.view(), &TrainConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "numeric");
        assert_eq!(net.flat_params(), before);
    }
}
