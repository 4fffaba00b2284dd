use serde::{Deserialize, Serialize};

use super::logistic;
use crate::error::{Error, Result};

/// One-dimensional map with a known derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum MapSpec {
    Logistic { r: f64 },
    /// `x + c`.
    Shift { c: f64 },
}

impl MapSpec {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            MapSpec::Logistic { r } => logistic(r, x),
            MapSpec::Shift { c } => x + c,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            MapSpec::Logistic { r } => r * (1.0 - 2.0 * x),
            MapSpec::Shift { .. } => 1.0,
        }
    }
}

/// Largest exponent per step as the orbit mean of `ln |f′(xₜ)|`.
pub fn lyapunov_map(map: &MapSpec, x0: f64, transient: usize, n_iter: usize) -> Result<f64> {
    if n_iter == 0 {
        return Err(Error::insufficient("map iterations", 1, 0));
    }
    if !x0.is_finite() {
        return Err(Error::invalid("initial state must be finite"));
    }
    let mut x = x0;
    for _ in 0..transient {
        x = map.apply(x);
    }
    let mut sum = 0.0;
    for _ in 0..n_iter {
        sum += map.derivative(x).abs().max(f64::MIN_POSITIVE).ln();
        x = map.apply(x);
    }
    if !sum.is_finite() {
        return Err(Error::Numeric("orbit diverged".into()));
    }
    Ok(sum / n_iter as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RosensteinConfig {
    pub dim: usize,
    /// Embedding delay; `None` uses the autocorrelation time.
    pub delay: Option<usize>,
    /// Minimum temporal separation of neighbours; `None` uses the
    /// autocorrelation time capped at a tenth of the series.
    pub theiler: Option<usize>,
    /// Divergence steps fitted by least squares, starting after the first step
    /// so measurement noise in the initial separation does not bias the slope.
    pub fit_steps: usize,
    pub min_len: usize,
}

impl Default for RosensteinConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            delay: None,
            theiler: None,
            fit_steps: 4,
            min_len: 1000,
        }
    }
}

/// First lag where the autocorrelation drops below 1/e.
fn autocorrelation_time(x: &[f64]) -> usize {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if var <= 0.0 {
        return 1;
    }
    let threshold = (-1.0f64).exp();
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum();
        if c / var < threshold {
            return lag;
        }
    }
    n / 2
}

/// Nearest-neighbour divergence estimate from a scalar series.
pub fn lyapunov_series(series: &[f64], cfg: &RosensteinConfig) -> Result<f64> {
    if series.len() < cfg.min_len {
        return Err(Error::insufficient("Lyapunov series", cfg.min_len, series.len()));
    }
    if cfg.dim == 0 || cfg.delay == Some(0) || cfg.fit_steps < 2 {
        return Err(Error::validation("embedding dim, delay and fit steps must be positive"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let n = series.len();
    let act = autocorrelation_time(series);
    let theiler = cfg.theiler.unwrap_or(act).clamp(1, n / 10);
    let delay = cfg.delay.unwrap_or(act).clamp(1, n / 10);
    let span = (cfg.dim - 1) * delay;
    let horizon = cfg.fit_steps + 1;
    let m = n - span - horizon;
    let dist2 = |a: usize, b: usize| -> f64 {
        (0..cfg.dim)
            .map(|k| {
                let d = series[a + k * delay] - series[b + k * delay];
                d * d
            })
            .sum()
    };
    let mut sums = vec![0.0; horizon + 1];
    let mut counts = vec![0usize; horizon + 1];
    for i in 0..m {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..m {
            if i.abs_diff(j) <= theiler {
                continue;
            }
            let d = dist2(i, j);
            if d > 0.0 && d < best.0 {
                best = (d, j);
            }
        }
        if best.1 == usize::MAX {
            continue;
        }
        for k in 0..=horizon {
            let d = dist2(i + k, best.1 + k);
            if d > 0.0 {
                sums[k] += 0.5 * d.ln();
                counts[k] += 1;
            }
        }
    }
    let pts: Vec<(f64, f64)> = (1..=horizon)
        .filter(|&k| counts[k] > 0)
        .map(|k| (k as f64, sums[k] / counts[k] as f64))
        .collect();
    // no separable neighbours: nothing diverges
    if pts.len() < 2 {
        return Ok(0.0);
    }
    let np = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
