use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{EarlyStopping, EpochRecord, Stage1Loss, TrainHistory};
use super::{validate_alphas, HorizonConfig};
use crate::error::{Error, Result};
use crate::nn::{
    delta_from_iqr, Activation, AdamW, AdamWConfig, Block, Checkpoint, Dense, Loss, Mode, ParamKind, Parameterized,
    Sequential,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub loss: Stage1Loss,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 60,
            batch_size: 256,
            patience: 12,
            loss: Stage1Loss::Pinball,
            optimizer: AdamWConfig {
                lr: 2e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            seed: 23,
        }
    }
}

/// Second-stage regressor from stage-1 quantiles of one coordinate to the
/// horizon's target quantiles: a linear skip plus a small PReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Refiner {
    pub horizon: HorizonConfig,
    pub input_alphas: Vec<f64>,
    pub skip: Sequential,
    pub deep: Sequential,
}

impl Refiner {
    pub fn new(horizon: HorizonConfig, input_alphas: &[f64], hidden: usize, seed: u64) -> Result<Self> {
        validate_alphas(input_alphas)?;
        validate_alphas(&horizon.quantiles)?;
        let (n_in, n_out) = (input_alphas.len(), horizon.quantiles.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // start the skip path at the nearest stage-1 level
        let mut skip_dense = Dense::zeros(n_in, n_out);
        for (o, a) in horizon.quantiles.iter().enumerate() {
            let k = input_alphas
                .iter()
                .enumerate()
                .min_by(|x, y| (x.1 - a).abs().total_cmp(&(y.1 - a).abs()))
                .map(|(k, _)| k)
                .expect("non-empty");
            skip_dense.w[[k, o]] = 1.0;
        }
        let mut out = Dense::new(hidden, n_out, &mut rng);
        out.w.mapv_inplace(|w| 0.1 * w);
        Ok(Self {
            skip: Sequential::new(vec![Block::new(skip_dense, None, Activation::Identity, 0.0)]),
            deep: Sequential::new(vec![
                Block::new(Dense::new(n_in, hidden, &mut rng), None, Activation::prelu(hidden), 0.0),
                Block::new(out, None, Activation::Identity, 0.0),
            ]),
            horizon,
            input_alphas: input_alphas.to_vec(),
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.horizon.quantiles.len()
    }

    fn raw(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_alphas.len() {
            return Err(Error::shape("refiner input width", self.input_alphas.len(), x.ncols()));
        }
        Ok(self.skip.predict(x)? + self.deep.predict(x)?)
    }

    /// Target quantiles per row, sorted so they never cross.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = self.raw(x)?;
        for mut row in out.rows_mut() {
            let mut v = row.to_vec();
            v.sort_by(f64::total_cmp);
            row.assign(&ndarray::Array1::from(v));
        }
        Ok(out)
    }

    fn objective(
        &self,
        x: ArrayView2<f64>,
        y: &[f64],
        kind: Stage1Loss,
        delta: f64,
        with_grads: bool,
    ) -> Result<(f64, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (qs, cs) = self.skip.forward(x, Mode::Eval, &mut rng)?;
        let (qd, cd) = self.deep.forward(x, Mode::Eval, &mut rng)?;
        let q = qs + qd;
        let n = (q.len()) as f64;
        let mut total = 0.0;
        let mut dq = Array2::zeros(q.dim());
        for (r, row) in q.rows().into_iter().enumerate() {
            for (k, &a) in self.horizon.quantiles.iter().enumerate() {
                let loss = match kind {
                    Stage1Loss::Pinball => Loss::Pinball { alpha: a },
                    Stage1Loss::ModifiedHuber => Loss::QuantileHuber { alpha: a, delta },
                };
                total += loss.value(y[r], row[k]);
                dq[[r, k]] = loss.grad(y[r], row[k]) / n;
            }
        }
        if !with_grads {
            return Ok((total / n, Vec::new()));
        }
        let (_, mut g) = self.skip.backward(&cs, dq.view());
        let (_, gd) = self.deep.backward(&cd, dq.view());
        g.extend(gd);
        Ok((total / n, g))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({
            "kind": "refiner",
            "horizon": self.horizon,
            "input_alphas": self.input_alphas,
            "hidden": self.deep.blocks[0].out_dim(),
        }));
        c.push("params", self.flat_params());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("refiner") {
            return Err(Error::Parse("checkpoint is not a refiner".into()));
        }
        let parse = |e: serde_json::Error| Error::Parse(format!("refiner checkpoint: {e}"));
        let horizon: HorizonConfig = serde_json::from_value(c.meta["horizon"].clone()).map_err(parse)?;
        let alphas: Vec<f64> = serde_json::from_value(c.meta["input_alphas"].clone()).map_err(parse)?;
        let hidden = c.meta["hidden"].as_u64().ok_or_else(|| Error::Parse("refiner hidden width".into()))? as usize;
        let mut r = Refiner::new(horizon, &alphas, hidden, 0)?;
        r.set_flat_params(c.section("params")?)?;
        Ok(r)
    }
}

impl Parameterized for Refiner {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        self.skip.visit_params(f);
        self.deep.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        self.skip.visit_params_mut(f);
        self.deep.visit_params_mut(f);
    }
}

/// Fits the refiner on `(stage-1 quantiles, realised target)` rows.
pub fn train_stage2(
    refiner: &mut Refiner,
    x_train: ArrayView2<f64>,
    y_train: &[f64],
    x_val: ArrayView2<f64>,
    y_val: &[f64],
    cfg: &RefineConfig,
) -> Result<TrainHistory> {
    if x_train.nrows() != y_train.len() || x_val.nrows() != y_val.len() {
        return Err(Error::shape("refiner targets", x_train.nrows(), y_train.len()));
    }
    if x_train.nrows() == 0 || x_val.nrows() == 0 {
        return Err(Error::insufficient("refiner rows", 1, 0));
    }
    let mut opt = AdamW::new(cfg.optimizer, refiner.n_params())?;
    let decay = refiner.decay_mask();
    let mut params = refiner.flat_params();
    let mut best = params.clone();
    let mut stopper = EarlyStopping::new(cfg.patience, 0.0);
    let mut history = TrainHistory::default();
    let median_col = refiner
        .input_alphas
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let resid: Vec<f64> = y_train
        .iter()
        .zip(x_train.column(median_col))
        .map(|(y, q)| y - q)
        .collect();
    let delta = if resid.len() >= 4 { delta_from_iqr(&resid)? } else { 1.0 };
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        opt.set_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x_train.select(Axis(0), chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let (l, g) = refiner.objective(xb.view(), &yb, cfg.loss, delta, true)?;
            if !l.is_finite() {
                refiner.set_flat_params(&best)?;
                return Err(Error::Numeric(format!("refinement loss diverged at epoch {epoch}")));
            }
            sum += l * chunk.len() as f64;
            opt.update(&mut params, &g, &decay)?;
            refiner.set_flat_params(&params)?;
        }
        let (loss_val, _) = refiner.objective(x_val, y_val, cfg.loss, delta, false)?;
        history.records.push(EpochRecord {
            epoch,
            loss_train: sum / x_train.nrows() as f64,
            loss_val,
            lr: opt.lr,
            delta,
        });
        let (improved, stop) = stopper.observe(epoch, loss_val);
        if improved {
            best.clone_from(&params);
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    refiner.set_flat_params(&best)?;
    Ok(history)
}
