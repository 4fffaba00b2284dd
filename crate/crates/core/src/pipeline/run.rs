use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig};
use crate::attention::{run_sequence, train_attention, AttentionTrainHistory, GatedAttention, StateSequence};
use crate::beqrnn::{
    build, train_stage1, train_stage2, QuantileNetwork, QuantilePrediction, Refiner, TrainHistory,
};
use crate::error::{Error, Result};
use crate::prognostics::{
    evaluate, first_scored_step, fit_baseline, pattern_transition_factor, predict_transition, risk_score,
    BaselineModel, EvalReport, SegmentPrediction, SegmentTruth, TransitionAlert,
};
use crate::snn::{score_samples, train_snn, SnnNetwork, SnnTrainHistory};
use crate::stpe::{entropy_rate, EntropyFeatureVector, EntropyField, FeatureExtractor, FeatureRecipe};
use crate::synth::{Label, LabeledDataset, Segment, SplitPart};

/// Feature rows and entropy field of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub rows: Vec<EntropyFeatureVector>,
    pub field: EntropyField,
    pub undersampled: bool,
}

/// Per-step features for every segment, computed in parallel.
pub fn extract_features(ds: &LabeledDataset, recipe: &FeatureRecipe) -> Result<Vec<SegmentFeatures>> {
    ds.segments
        .par_iter()
        .map(|seg| {
            let mut ex = FeatureExtractor::new(seg.grid(), recipe)?;
            let rows = ex.extract(1)?;
            Ok(SegmentFeatures {
                rows,
                field: ex.field().clone(),
                undersampled: ex.undersampled(),
            })
        })
        .collect()
}

/// First step touched by the cross-fade, or the segment length when the
/// segment never transitions. Rows before it are clean normal data.
pub fn clean_normal_end(seg: &Segment, blend: usize, n_steps: usize) -> usize {
    match seg.transition_step {
        Some(ts) => ts.saturating_sub(blend.div_ceil(2)),
        None => n_steps,
    }
}

/// Per-column affine standardization fitted on normal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::insufficient("standardizer rows", 2, 0));
        };
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        // constant columns pass through centred
        for s in std.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, col: usize, z: f64) -> f64 {
        z * self.std[col] + self.mean[col]
    }

    fn matrix(&self, rows: &[EntropyFeatureVector]) -> Array2<f64> {
        let d = self.mean.len();
        let mut x = Array2::zeros((rows.len(), d));
        for (r, row) in rows.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::Array1::from(self.apply(&row.features)));
        }
        x
    }
}

/// Up to `cap` indices spread evenly over `0..n`.
fn spread(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|k| k * n / cap).collect()
}

fn parts<'a>(
    ds: &'a LabeledDataset,
    feats: &'a [SegmentFeatures],
    part: SplitPart,
) -> impl Iterator<Item = (usize, &'a Segment, &'a SegmentFeatures)> {
    ds.segments
        .iter()
        .zip(feats)
        .enumerate()
        .filter(move |(_, (s, _))| s.part == part)
        .map(|(k, (s, f))| (k, s, f))
}

fn clean_rows<'a>(seg: &Segment, f: &'a SegmentFeatures, ds: &LabeledDataset) -> &'a [EntropyFeatureVector] {
    let end = clean_normal_end(seg, ds.config.blend, ds.config.n_steps);
    let n = f.rows.iter().take_while(|r| r.t < end).count();
    &f.rows[..n]
}

fn check_alignment(ds: &LabeledDataset, feats: &[SegmentFeatures]) -> Result<()> {
    if ds.segments.len() != feats.len() {
        return Err(Error::shape("feature sets vs segments", ds.segments.len(), feats.len()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Stage1Artifacts {
    pub net: QuantileNetwork,
    pub standardizer: Standardizer,
    pub baseline: BaselineModel,
    pub history: TrainHistory,
}

/// Fits the standardizer, the normal baseline and the quantile autoencoder
/// on clean normal steps of the training segments.
pub fn run_stage1(cfg: &RunConfig, ds: &LabeledDataset, feats: &[SegmentFeatures]) -> Result<Stage1Artifacts> {
    stage1_inner(cfg, ds, feats, None)
}

/// Continues stage 1 from `net`, numbering epochs from `start_epoch`.
pub fn resume_stage1(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    feats: &[SegmentFeatures],
    net: QuantileNetwork,
    start_epoch: usize,
) -> Result<Stage1Artifacts> {
    stage1_inner(cfg, ds, feats, Some((net, start_epoch)))
}

fn stage1_inner(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    feats: &[SegmentFeatures],
    resume: Option<(QuantileNetwork, usize)>,
) -> Result<Stage1Artifacts> {
    check_alignment(ds, feats)?;
    let pool = |part| -> Vec<&[f64]> {
        parts(ds, feats, part)
            .flat_map(|(_, s, f)| clean_rows(s, f, ds).iter().map(|r| r.features.as_slice()))
            .collect()
    };
    let train_rows = pool(SplitPart::Train);
    let val_rows = pool(SplitPart::Val);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::insufficient("clean normal rows in train and val splits", 1, 0));
    }
    let standardizer = Standardizer::fit(&train_rows)?;
    let to_matrix = |rows: &[&[f64]], cap: usize| {
        let idx = spread(rows.len(), cap);
        let mut x = Array2::zeros((idx.len(), standardizer.mean.len()));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::Array1::from(standardizer.apply(rows[i])));
        }
        x
    };
    let x_train = to_matrix(&train_rows, cfg.stage1.max_rows);
    let x_val = to_matrix(&val_rows, (cfg.stage1.max_rows / 4).max(1));
    let mut train_cfg = cfg.stage1.train.clone();
    let mut net = match resume {
        Some((net, start)) => {
            if net.topology.input_dim() != standardizer.mean.len() {
                return Err(Error::shape("resumed network input", standardizer.mean.len(), net.topology.input_dim()));
            }
            train_cfg.start_epoch = start;
            net
        }
        None => build(&cfg.stage1.topology, &cfg.stage1.build)?,
    };
    let history = train_stage1(&mut net, x_train.view(), x_train.view(), x_val.view(), x_val.view(), &train_cfg)?;

    let fields: Vec<EntropyField> = parts(ds, feats, SplitPart::Train)
        .filter_map(|(_, s, f)| {
            let end = clean_normal_end(s, ds.config.blend, ds.config.n_steps);
            f.field.crop_time(0, end).ok()
        })
        .collect();
    let baseline = fit_baseline(&fields, &cfg.baseline)?;
    Ok(Stage1Artifacts {
        net,
        standardizer,
        baseline,
        history,
    })
}

/// Standardized rows and decoded attention forecasts of one segment; row
/// `t` of the forecast predicts row `t + 1`.
pub fn forecast_segment(
    net: &QuantileNetwork,
    att: &GatedAttention,
    standardizer: &Standardizer,
    rows: &[EntropyFeatureVector],
) -> Result<(Array2<f64>, Vec<QuantilePrediction>)> {
    let x = standardizer.matrix(rows);
    let states = net.encode(x.view())?;
    let (gated, _) = run_sequence(att, states.view())?;
    let trunk = net.decode(gated.view())?;
    Ok((x, net.heads_from_trunk(trunk.view())))
}

/// Spike-encoder input for step `t`: per coordinate, the forecast surprise
/// `s = |x − q.5| / (q.9 − q.1)` squashed to `s / (1 + s)`.
pub fn surprise_channels(x: ndarray::ArrayView1<f64>, forecast: &QuantilePrediction) -> Result<Vec<f64>> {
    let get = |a: f64| {
        forecast
            .level(a)
            .ok_or_else(|| Error::validation(format!("quantile network lacks level {a}")))
    };
    let (lo, mid, hi) = (get(0.1)?, get(0.5)?, get(0.9)?);
    Ok((0..x.len())
        .map(|c| {
            let s = (x[c] - mid[c]).abs() / (hi[c] - lo[c]).max(1e-6);
            s / (1.0 + s)
        })
        .collect())
}

fn refiner_input(pred: &QuantilePrediction, col: usize) -> Vec<f64> {
    pred.values.column(col).to_vec()
}

#[derive(Debug, Clone)]
pub struct Stage2Artifacts {
    pub attention: GatedAttention,
    pub refiner: Refiner,
    pub attention_history: AttentionTrainHistory,
    pub refine_history: TrainHistory,
}

/// Trains the gated attention on next-step forecasting over clean normal
/// sequences, then the horizon refiner on the decoded forecasts.
pub fn run_stage2(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    feats: &[SegmentFeatures],
    s1: &Stage1Artifacts,
) -> Result<Stage2Artifacts> {
    check_alignment(ds, feats)?;
    let net = &s1.net;
    let sequences = |part| -> Result<Vec<StateSequence>> {
        let mut out = Vec::new();
        for (_, s, f) in parts(ds, feats, part) {
            let rows = clean_rows(s, f, ds);
            if rows.len() < 3 {
                continue;
            }
            let x = s1.standardizer.matrix(rows);
            let states = net.encode(x.view())?;
            let n = rows.len() - 1;
            out.push(StateSequence {
                states: states.slice(ndarray::s![..n, ..]).to_owned(),
                targets: x.slice(ndarray::s![1.., ..]).to_owned(),
            });
        }
        Ok(out)
    };
    let train_seq = sequences(SplitPart::Train)?;
    let val_seq = sequences(SplitPart::Val)?;
    let count = |s: &[StateSequence]| s.iter().map(|q| q.states.nrows()).sum::<usize>();
    let mut att_cfg = cfg.stage2.attention_train.clone();
    att_cfg.stride = count(&train_seq).div_ceil(cfg.stage2.max_steps).max(1);
    let mut val_cfg_stride = count(&val_seq).div_ceil((cfg.stage2.max_steps / 4).max(1)).max(1);
    val_cfg_stride = val_cfg_stride.max(att_cfg.stride);
    let val_seq: Vec<StateSequence> = val_seq
        .into_iter()
        .map(|s| thin_sequence(s, val_cfg_stride / att_cfg.stride))
        .collect();
    let mut opts = cfg.stage2.attention;
    opts.d_model = net.topology.bottleneck();
    opts.d_k = opts.d_k.max(1);
    let mut attention = GatedAttention::new(&opts)?;
    let attention_history = train_attention(&mut attention, net, &train_seq, &val_seq, &att_cfg)?;

    let col = cfg.stage2.target_feature;
    let h = cfg.stage2.horizon.horizon_steps;
    let refine_rows = |part| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (_, _, f) in parts(ds, feats, part) {
            let (x, preds) = forecast_segment(net, &attention, &s1.standardizer, &f.rows)?;
            for t in 0..preds.len().saturating_sub(h) {
                xs.push(refiner_input(&preds[t], col));
                ys.push(x[[t + h, col]]);
            }
        }
        Ok((xs, ys))
    };
    let (xt, yt) = refine_rows(SplitPart::Train)?;
    let (xv, yv) = refine_rows(SplitPart::Val)?;
    let to_arrays = |xs: &[Vec<f64>], ys: &[f64], cap: usize| {
        let idx = spread(xs.len(), cap);
        let width = xs.first().map_or(0, Vec::len);
        let mut a = Array2::zeros((idx.len(), width));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            a.row_mut(r).assign(&ndarray::Array1::from(xs[i].clone()));
            y.push(ys[i]);
        }
        (a, y)
    };
    let (xt, yt) = to_arrays(&xt, &yt, cfg.stage2.max_rows);
    let (xv, yv) = to_arrays(&xv, &yv, (cfg.stage2.max_rows / 4).max(1));
    let mut refiner = Refiner::new(
        cfg.stage2.horizon.clone(),
        &net.alphas(),
        cfg.stage2.refine.hidden,
        cfg.stage2.refine.seed,
    )?;
    let refine_history = train_stage2(&mut refiner, xt.view(), &yt, xv.view(), &yv, &cfg.stage2.refine)?;
    Ok(Stage2Artifacts {
        attention,
        refiner,
        attention_history,
        refine_history,
    })
}

fn thin_sequence(s: StateSequence, every: usize) -> StateSequence {
    if every <= 1 {
        return s;
    }
    // keep contiguous runs so history stays meaningful; drop the tail
    let n = (s.states.nrows() / every).max(2).min(s.states.nrows());
    StateSequence {
        states: s.states.slice(ndarray::s![..n, ..]).to_owned(),
        targets: s.targets.slice(ndarray::s![..n, ..]).to_owned(),
    }
}

/// `(t, input channels)` for every step that has a previous forecast.
fn snn_samples(
    s1: &Stage1Artifacts,
    att: &GatedAttention,
    f: &SegmentFeatures,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let (x, preds) = forecast_segment(&s1.net, att, &s1.standardizer, &f.rows)?;
    (1..f.rows.len())
        .map(|k| Ok((f.rows[k].t, surprise_channels(x.row(k), &preds[k - 1])?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SnnArtifacts {
    pub net: SnnNetwork,
    pub history: SnnTrainHistory,
}

/// Trains the spiking classifier on forecast-surprise inputs of the
/// training segments, labelled per step.
pub fn run_snn(
    cfg: &RunConfig,
    ds: &LabeledDataset,
    feats: &[SegmentFeatures],
    s1: &Stage1Artifacts,
    s2: &Stage2Artifacts,
) -> Result<SnnArtifacts> {
    check_alignment(ds, feats)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (_, s, f) in parts(ds, feats, SplitPart::Train) {
        for (t, v) in snn_samples(s1, &s2.attention, f)? {
            inputs.push(v);
            labels.push(if s.label_at(t) == Label::Abnormal { 1.0 } else { 0.0 });
        }
    }
    let idx = spread(inputs.len(), cfg.snn.max_rows);
    let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| inputs[i].clone()).collect();
    let labels: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
    let n_in = inputs.first().map_or(0, Vec::len);
    let mut net = SnnNetwork::new(n_in, &cfg.snn.options, cfg.snn.lif)?;
    let quantile_loss = s1.history.records.last().map_or(0.0, |r| r.loss_val);
    let history = train_snn(&mut net, &inputs, &labels, &cfg.snn.train, quantile_loss)?;
    Ok(SnnArtifacts { net, history })
}

/// All trained parts needed for prediction.
#[derive(Debug, Clone)]
pub struct Models {
    pub stage1: Stage1Artifacts,
    pub stage2: Stage2Artifacts,
    pub snn: SnnArtifacts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub t: usize,
    pub value: f64,
    pub overflow: bool,
    pub ptf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutput {
    pub segment: usize,
    pub alerts: Vec<TransitionAlert>,
    pub scored_from: usize,
    /// SNN anomaly score `A(t)`.
    pub scores: Vec<(usize, f64)>,
    pub risk: Vec<RiskRow>,
}

impl SegmentOutput {
    pub fn classifications(&self) -> Vec<(usize, Label)> {
        self.scores
            .iter()
            .map(|&(t, a)| (t, if a >= 0.5 { Label::Abnormal } else { Label::Normal }))
            .collect()
    }
}

/// Alerts, anomaly scores and risk scores for one segment.
pub fn predict_segment(cfg: &RunConfig, models: &Models, k: usize, f: &SegmentFeatures) -> Result<SegmentOutput> {
    let s1 = &models.stage1;
    let s2 = &models.stage2;
    let baseline = &s1.baseline;
    let alerts = predict_transition(&f.field, baseline, &cfg.alerts)?;
    let samples = snn_samples(s1, &s2.attention, f)?;
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(_, v)| v.clone()).collect();
    let a = score_samples(&models.snn.net, &inputs, &cfg.snn.train, derive_seed(cfg.snn.train.seed, &format!("score{k}")))?;
    let scores = samples.iter().map(|(t, _)| *t).zip(a).collect();

    let (_, preds) = forecast_segment(&s1.net, &s2.attention, &s1.standardizer, &f.rows)?;
    let col = cfg.stage2.target_feature;
    let mut xin = Array2::zeros((preds.len(), s1.net.alphas().len()));
    for (r, p) in preds.iter().enumerate() {
        xin.row_mut(r).assign(&ndarray::Array1::from(refiner_input(p, col)));
    }
    let refined = s2.refiner.predict(xin.view())?;
    let levels = &s2.refiner.horizon.quantiles;
    let mut risk = Vec::with_capacity(preds.len());
    for (r, row) in refined.axis_iter(Axis(0)).enumerate() {
        let t = f.rows[r].t;
        let q: Vec<(f64, f64)> = levels
            .iter()
            .zip(row.iter())
            .map(|(&al, &z)| (al, s1.standardizer.invert(col, z)))
            .collect();
        let mean_rate = entropy_rate(&f.field, t, baseline.rate_window)
            .map(|g| {
                let v: Vec<f64> = g.present().collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .unwrap_or(0.0);
        let ptf = pattern_transition_factor(mean_rate, baseline.tau_critical);
        match risk_score(&q, ptf) {
            Ok(s) => risk.push(RiskRow {
                t,
                value: s.value,
                overflow: s.overflow,
                ptf,
            }),
            // horizons without the four risk levels report no risk
            Err(Error::InvalidInput(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(SegmentOutput {
        segment: k,
        alerts,
        scored_from: first_scored_step(&f.field, baseline, &cfg.alerts),
        scores,
        risk,
    })
}

/// Predictions for the listed segments, in order.
pub fn predict_all(cfg: &RunConfig, models: &Models, feats: &[SegmentFeatures], which: &[usize]) -> Result<Vec<SegmentOutput>> {
    which
        .par_iter()
        .map(|&k| predict_segment(cfg, models, k, &feats[k]))
        .collect()
}

/// Evaluation report over the segments in `outputs`.
pub fn evaluate_outputs(ds: &LabeledDataset, outputs: &[SegmentOutput], horizon: usize) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(outputs.len());
    let mut truth = Vec::with_capacity(outputs.len());
    for o in outputs {
        let seg = ds
            .segments
            .get(o.segment)
            .ok_or_else(|| Error::Range(format!("segment {} not in dataset", o.segment)))?;
        preds.push(SegmentPrediction {
            alerts: o.alerts.iter().map(|a| a.t_trigger).collect(),
            scored_from: o.scored_from,
            classifications: o.classifications(),
        });
        truth.push(SegmentTruth {
            transition_step: seg.transition_step,
            n_steps: ds.config.n_steps,
        });
    }
    let mut report = evaluate(&preds, &truth, horizon)?;
    for (r, o) in report.segments.iter_mut().zip(outputs) {
        r.segment = o.segment;
    }
    Ok(report)
}

/// Segment indices of a split.
pub fn part_indices(ds: &LabeledDataset, part: SplitPart) -> Vec<usize> {
    ds.segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.part == part)
        .map(|(k, _)| k)
        .collect()
}
