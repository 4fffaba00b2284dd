//! Normal-band calibration, transition triggers, trend extrapolation, risk
//! scoring, evaluation and capacity planning.

mod capacity;
mod eval;
mod extrapolate;


pub use capacity::{capacity_plan, CapacityPlan};
pub use eval::{evaluate, EvalReport, SegmentPrediction, SegmentRecord, SegmentTruth};
pub use extrapolate::{extrapolate_horizon, quantile_line, QuantileBand, DEFAULT_LAG_WINDOW};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::quantile_linear;
use crate::stpe::{entropy_gradient, entropy_rate, CellGrid, EntropyField, Gradient};

pub const DEFAULT_HORIZON: usize = 155;
pub const DEFAULT_QUORUM: usize = 3;
/// Denominator guard of the risk score.
pub const RISK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Trailing window of the per-cell rate fit.
    pub rate_window: usize,
    /// Percentile of normal rates and gradient magnitudes used as thresholds.
    pub percentile: f64,
    pub min_samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rate_window: 16,
            percentile: 0.99,
            min_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub mu_baseline: f64,
    pub sigma_baseline: f64,
    pub tau_critical: f64,
    pub gamma_spatial: f64,
    /// Set when the normal data has zero spread; the band is the single point `μ`.
    pub degenerate: bool,
    pub rate_window: usize,
    pub percentile: f64,
    pub n_samples: usize,
    pub n_fields: usize,
}

/// Smallest threshold a calibration may produce.
const MIN_THRESHOLD: f64 = 1e-12;

/// Fits the normal band and the trigger thresholds from fields that contain
/// verified-normal steps only.
pub fn fit_baseline(normal_fields: &[EntropyField], cfg: &BaselineConfig) -> Result<BaselineModel> {
    if cfg.rate_window == 0 {
        return Err(Error::validation("rate window must be >= 1"));
    }
    if !(cfg.percentile > 0.0 && cfg.percentile < 1.0) {
        return Err(Error::validation(format!("percentile {} outside (0, 1)", cfg.percentile)));
    }
    let mut values = Vec::new();
    let mut rates = Vec::new();
    let mut grads = Vec::new();
    for f in normal_fields {
        values.extend(f.all_valid_values());
        for t in f.valid_from()..f.n_steps() {
            grads.extend(entropy_gradient(f, t)?.present().map(|g| g.magnitude));
            if t >= f.valid_from() + cfg.rate_window {
                rates.extend(entropy_rate(f, t, cfg.rate_window)?.present());
            }
        }
    }
    let need = cfg.min_samples.max(1);
    if values.len() < need {
        return Err(Error::insufficient("normal entropy samples", need, values.len()));
    }
    if rates.is_empty() {
        return Err(Error::insufficient("normal rate samples", 1, 0));
    }
    let n = values.len() as f64;
    let constant = values.iter().all(|&v| v == values[0]);
    let (mu, sigma) = if constant {
        (values[0], 0.0)
    } else {
        let mu = values.iter().sum::<f64>() / n;
        (mu, (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt())
    };
    let pct = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        quantile_linear(&xs, cfg.percentile).max(MIN_THRESHOLD)
    };
    Ok(BaselineModel {
        mu_baseline: mu,
        sigma_baseline: sigma,
        tau_critical: pct(rates),
        gamma_spatial: pct(grads),
        degenerate: sigma == 0.0,
        rate_window: cfg.rate_window,
        percentile: cfg.percentile,
        n_samples: values.len(),
        n_fields: normal_fields.len(),
    })
}

/// Closed-interval membership in `μ ± 2σ`.
pub fn in_normal_band(h: f64, baseline: &BaselineModel) -> bool {
    let half = 2.0 * baseline.sigma_baseline;
    h >= baseline.mu_baseline - half && h <= baseline.mu_baseline + half
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMap {
    /// Per-cell firing, `None` where the cell is absent.
    pub cells: CellGrid<bool>,
    pub n_fired: usize,
    pub global: bool,
}

/// Per-cell AND of rate and gradient exceedances; the global trigger needs
/// at least `quorum` firing cells.
pub fn trigger(
    rate: &CellGrid<f64>,
    gradient: &CellGrid<Gradient>,
    baseline: &BaselineModel,
    quorum: usize,
) -> Result<TriggerMap> {
    if rate.width != gradient.width || rate.height != gradient.height {
        return Err(Error::shape(
            "trigger grid cells",
            rate.width * rate.height,
            gradient.width * gradient.height,
        ));
    }
    if quorum == 0 {
        return Err(Error::validation("trigger quorum must be >= 1"));
    }
    let mut cells = Vec::with_capacity(rate.cells.len());
    let mut n_fired = 0;
    for (r, g) in rate.cells.iter().zip(&gradient.cells) {
        match (r, g) {
            (Some(r), Some(g)) => {
                let fire = *r > baseline.tau_critical && g.magnitude > baseline.gamma_spatial;
                n_fired += fire as usize;
                cells.push(Some(fire));
            }
            (None, None) => cells.push(None),
            _ => return Err(Error::invalid("rate and gradient grids have different cell masks")),
        }
    }
    Ok(TriggerMap {
        cells: CellGrid {
            width: rate.width,
            height: rate.height,
            cells,
        },
        n_fired,
        global: n_fired >= quorum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlertConfig {
    pub horizon_steps: usize,
    pub lag_window: usize,
    pub quorum: usize,
    pub quantiles: Vec<f64>,
    /// Also alert when the extrapolated median leaves the normal band.
    pub trend_exit: bool,
    /// Steps the firing condition must persist before an alert is raised.
    pub persistence: usize,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self {
            horizon_steps: DEFAULT_HORIZON,
            lag_window: DEFAULT_LAG_WINDOW,
            quorum: DEFAULT_QUORUM,
            quantiles: vec![0.1, 0.5, 0.9],
            trend_exit: true,
            persistence: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionAlert {
    pub t_trigger: usize,
    pub predicted_transition_step: usize,
    pub horizon_steps: usize,
    /// Grid-mean rate and grid-mean gradient magnitude at the trigger step.
    pub trigger_values: (f64, f64),
    /// `(low, median, high)` extrapolated grid-mean entropy at `t + horizon`.
    pub quantile_band: (f64, f64, f64),
    /// Both the threshold trigger and the trend exit agreed.
    pub confidence_flag: bool,
}

/// Per-step diagnostics behind [`predict_transition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonStep {
    pub t: usize,
    pub mean_rate: f64,
    pub mean_gradient: f64,
    pub n_fired: usize,
    pub triggered: bool,
    pub band: (f64, f64, f64),
    /// Offset of the first extrapolated step outside the band, if any.
    pub exit_offset: Option<usize>,
}

/// First step in the lag window from which every diagnostic is defined.
pub fn first_scored_step(field: &EntropyField, baseline: &BaselineModel, cfg: &AlertConfig) -> usize {
    field.valid_from() + baseline.rate_window.max(cfg.lag_window.saturating_sub(1))
}

/// Trigger and trend diagnostics for every scoreable step of `field`.
pub fn horizon_trace(field: &EntropyField, baseline: &BaselineModel, cfg: &AlertConfig) -> Result<Vec<HorizonStep>> {
    if cfg.horizon_steps == 0 || cfg.lag_window < 2 {
        return Err(Error::validation("horizon must be >= 1 and lag window >= 2"));
    }
    let trace = field.mean_trace();
    if trace.len() != field.n_steps() - field.valid_from() {
        return Err(Error::invalid("field has steps without valid cells"));
    }
    let start = first_scored_step(field, baseline, cfg);
    let median_idx = median_index(&cfg.quantiles)?;
    let mut out = Vec::new();
    for t in start..field.n_steps() {
        let rate = entropy_rate(field, t, baseline.rate_window)?;
        let grad = entropy_gradient(field, t)?;
        let trig = trigger(&rate, &grad, baseline, cfg.quorum)?;
        let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        let mean_rate = mean(rate.present().collect());
        let mean_gradient = mean(grad.present().map(|g| g.magnitude).collect());
        let hist = &trace[..=t - field.valid_from()];
        let band = extrapolate_horizon(hist, cfg.horizon_steps, &cfg.quantiles, cfg.lag_window)?;
        let exit_offset = if cfg.trend_exit {
            let (a, b) = band.lines[median_idx];
            (1..=cfg.horizon_steps).find(|&k| !in_normal_band(a + b * k as f64, baseline))
        } else {
            None
        };
        out.push(HorizonStep {
            t,
            mean_rate,
            mean_gradient,
            n_fired: trig.n_fired,
            triggered: trig.global,
            band: (band.low(), band.values[median_idx], band.high()),
            exit_offset,
        });
    }
    Ok(out)
}

fn median_index(quantiles: &[f64]) -> Result<usize> {
    if quantiles.is_empty() {
        return Err(Error::validation("at least one quantile level is required"));
    }
    let mut sorted = quantiles.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
        .map(|(k, _)| k)
        .expect("non-empty"))
}

/// Onset alerts from a diagnostic trace: one alert each time the firing
/// condition has held for `persistence` consecutive steps after being off.
pub fn alerts_from_trace(steps: &[HorizonStep], cfg: &AlertConfig) -> Vec<TransitionAlert> {
    let need = cfg.persistence.max(1);
    let mut run = 0;
    let mut alerts = Vec::new();
    for s in steps {
        let fire = s.triggered || s.exit_offset.is_some();
        run = if fire { run + 1 } else { 0 };
        if run == need {
            let offset = s.exit_offset.unwrap_or(cfg.horizon_steps);
            alerts.push(TransitionAlert {
                t_trigger: s.t,
                predicted_transition_step: s.t + offset,
                horizon_steps: cfg.horizon_steps,
                trigger_values: (s.mean_rate, s.mean_gradient),
                quantile_band: s.band,
                confidence_flag: s.triggered && s.exit_offset.is_some(),
            });
        }
    }
    alerts
}

/// Alerts for one entropy field; empty when nothing fires or the field is
/// shorter than the lag window.
pub fn predict_transition(
    field: &EntropyField,
    baseline: &BaselineModel,
    cfg: &AlertConfig,
) -> Result<Vec<TransitionAlert>> {
    if first_scored_step(field, baseline, cfg) >= field.n_steps() {
        return Ok(Vec::new());
    }
    Ok(alerts_from_trace(&horizon_trace(field, baseline, cfg)?, cfg))
}

/// `1 + clamp(rate / τ_critical, 0, 9)`: 1 in steady state, at most 10.
pub fn pattern_transition_factor(grid_mean_rate: f64, tau_critical: f64) -> f64 {
    if !(tau_critical > 0.0) || !grid_mean_rate.is_finite() {
        return 1.0;
    }
    1.0 + (grid_mean_rate / tau_critical).clamp(0.0, 9.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub value: f64,
    /// The denominator was below the guard and was clamped.
    pub overflow: bool,
}

fn lookup(q: &[(f64, f64)], alpha: f64) -> Result<f64> {
    q.iter()
        .find(|(a, _)| (a - alpha).abs() < 1e-9)
        .map(|&(_, v)| v)
        .ok_or_else(|| Error::invalid(format!("risk score needs quantile {alpha}")))
}

/// `|q.25 · q.4 / (q.6 · q.75)| · ptf` with the denominator magnitude
/// clamped to at least [`RISK_EPS`].
pub fn risk_score(q: &[(f64, f64)], ptf: f64) -> Result<RiskScore> {
    if !(ptf >= 1.0) || !ptf.is_finite() {
        return Err(Error::validation(format!("pattern transition factor {ptf} must be finite and >= 1")));
    }
    let num = lookup(q, 0.25)? * lookup(q, 0.4)?;
    let den = lookup(q, 0.6)? * lookup(q, 0.75)?;
    let overflow = den.abs() < RISK_EPS;
    Ok(RiskScore {
        value: (num / den.abs().max(RISK_EPS)).abs() * ptf,
        overflow,
    })
}
