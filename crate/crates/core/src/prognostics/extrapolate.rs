use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAG_WINDOW: usize = 64;

const IRLS_ITERS: usize = 60;

/// Extrapolated quantiles at `t + horizon`, sorted by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    /// Per level, `(value at t, slope per step)` of the fitted trend line.
    pub lines: Vec<(f64, f64)>,
    pub horizon: usize,
}

impl QuantileBand {
    pub fn low(&self) -> f64 {
        self.values[0]
    }

    pub fn high(&self) -> f64 {
        *self.values.last().expect("non-empty band")
    }

    pub fn median(&self) -> f64 {
        let k = self
            .alphas
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
            .map(|(k, _)| k)
            .expect("non-empty band");
        self.values[k]
    }
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sw += wi;
        sx += wi * xi;
        sy += wi * yi;
        sxx += wi * xi * xi;
        sxy += wi * xi * yi;
    }
    if !(sw > 0.0) {
        return None;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let vxx = sxx / sw - mx * mx;
    let b = if vxx > 1e-300 { (sxy / sw - mx * my) / vxx } else { 0.0 };
    Some((my - b * mx, b))
}

/// Linear `α`-quantile regression of `y` on `x` by iteratively reweighted
/// least squares on the pinball loss, started from ordinary least squares.
pub fn quantile_line(x: &[f64], y: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape("quantile regression abscissae", y.len(), x.len()));
    }
    if x.len() < 2 {
        return Err(Error::insufficient("quantile regression points", 2, x.len()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("quantile level {alpha} outside (0, 1)")));
    }
    let n = y.len();
    let ones = vec![1.0; n];
    let (mut a, mut b) = weighted_line(x, y, &ones).expect("positive weights");
    let scale = {
        let m = y.iter().sum::<f64>() / n as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    if y.iter().all(|&v| v == y[0]) {
        return Ok((y[0], 0.0));
    }
    let floor = 1e-8 * scale.max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n];
    for _ in 0..IRLS_ITERS {
        for i in 0..n {
            let r = y[i] - (a + b * x[i]);
            let side = if r >= 0.0 { alpha } else { 1.0 - alpha };
            w[i] = side / r.abs().max(floor);
        }
        let Some((na, nb)) = weighted_line(x, y, &w) else { break };
        let moved = (na - a).abs() + (nb - b).abs() * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a = na;
        b = nb;
        if moved < 1e-12 * scale {
            break;
        }
    }
    Ok((a, b))
}

/// Fits one trend line per level to the last `lag_window` values of
/// `history` and evaluates each `horizon` steps past its final value.
pub fn extrapolate_horizon(
    history: &[f64],
    horizon: usize,
    quantiles: &[f64],
    lag_window: usize,
) -> Result<QuantileBand> {
    if lag_window < 2 {
        return Err(Error::validation("lag window must be >= 2"));
    }
    if history.len() < lag_window {
        return Err(Error::insufficient("entropy history", lag_window, history.len()));
    }
    if quantiles.is_empty() {
        return Err(Error::validation("at least one quantile level is required"));
    }
    let y = &history[history.len() - lag_window..];
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("entropy history must be finite"));
    }
    // abscissa 0 is the newest value
    let x: Vec<f64> = (0..lag_window).map(|k| k as f64 - (lag_window - 1) as f64).collect();
    let mut alphas = quantiles.to_vec();
    alphas.sort_by(f64::total_cmp);
    let mut lines = Vec::with_capacity(alphas.len());
    let mut values = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let (a, b) = quantile_line(&x, y, alpha)?;
        lines.push((a, b));
        values.push(a + b * horizon as f64);
    }
    // crossing lines can invert the order at long horizons
    values.sort_by(f64::total_cmp);
    Ok(QuantileBand {
        alphas,
        values,
        lines,
        horizon,
    })
}
