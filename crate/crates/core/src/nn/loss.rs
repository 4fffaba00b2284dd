use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the IQR-derived Huber threshold.
pub const DELTA_MIN: f64 = 1e-6;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Range(format!("quantile level {alpha} outside (0, 1)")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Range(format!("huber delta must be > 0, got {delta}")))
    }
}

/// `max(α(y − q), (α − 1)(y − q))`.
pub fn pinball_loss(y: f64, q: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let r = y - q;
    Ok((alpha * r).max((alpha - 1.0) * r))
}

/// `∂/∂q` of the pinball loss; zero at the kink.
pub fn pinball_grad(y: f64, q: f64, alpha: f64) -> f64 {
    if y > q {
        -alpha
    } else if y < q {
        1.0 - alpha
    } else {
        0.0
    }
}

/// Quadratic within `delta`, linear outside.
pub fn modified_huber(y: f64, q: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let r = (y - q).abs();
    Ok(if r <= delta {
        0.5 * r * r
    } else {
        delta * r - 0.5 * delta * delta
    })
}

/// `∂/∂q` of the modified Huber loss.
pub fn huber_grad(y: f64, q: f64, delta: f64) -> f64 {
    let r = y - q;
    if r.abs() <= delta {
        -r
    } else {
        -delta * r.signum()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Huber threshold from the interquartile range of residuals.
pub fn delta_from_iqr(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 4 {
        return Err(Error::insufficient("residuals for IQR", 4, residuals.len()));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite residual".into()));
    }
    let mut v = residuals.to_vec();
    v.sort_by(f64::total_cmp);
    let iqr = quantile_linear(&v, 0.75) - quantile_linear(&v, 0.25);
    Ok(iqr.max(DELTA_MIN))
}

/// Pointwise training losses on a prediction `q` for target `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Pinball { alpha: f64 },
    Huber { delta: f64 },
    /// Huber residual weighted by `|α − 1{y < q}|`, whose minimizer tracks the α-level.
    QuantileHuber { alpha: f64, delta: f64 },
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Squared => Ok(()),
            Loss::Pinball { alpha } => check_alpha(alpha),
            Loss::Huber { delta } => check_delta(delta),
            Loss::QuantileHuber { alpha, delta } => check_alpha(alpha).and(check_delta(delta)),
        }
    }

    pub fn value(&self, y: f64, q: f64) -> f64 {
        let r = y - q;
        match *self {
            Loss::Squared => 0.5 * r * r,
            Loss::Pinball { alpha } => (alpha * r).max((alpha - 1.0) * r),
            Loss::Huber { delta } => huber_value(r, delta),
            Loss::QuantileHuber { alpha, delta } => asym_weight(r, alpha) * huber_value(r, delta),
        }
    }

    pub fn grad(&self, y: f64, q: f64) -> f64 {
        match *self {
            Loss::Squared => q - y,
            Loss::Pinball { alpha } => pinball_grad(y, q, alpha),
            Loss::Huber { delta } => huber_grad(y, q, delta),
            Loss::QuantileHuber { alpha, delta } => asym_weight(y - q, alpha) * huber_grad(y, q, delta),
        }
    }

    /// Identifies the smooth piece containing `(y, q)`.
    pub fn branch(&self, y: f64, q: f64) -> u8 {
        let r = y - q;
        let sign = (r > 0.0) as u8;
        match *self {
            Loss::Squared => 0,
            Loss::Pinball { .. } => sign,
            Loss::Huber { delta } | Loss::QuantileHuber { delta, .. } => sign | (((r.abs() > delta) as u8) << 1),
        }
    }
}

fn huber_value(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * a - 0.5 * delta * delta
    }
}

fn asym_weight(r: f64, alpha: f64) -> f64 {
    if r < 0.0 {
        1.0 - alpha
    } else {
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinball_examples() {
        assert!((pinball_loss(1.0, 0.0, 0.9).unwrap() - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.0, 1.0, 0.9).unwrap() - 0.1).abs() < 1e-15);
        for a in [0.01, 0.3, 0.99] {
            assert_eq!(pinball_loss(2.5, 2.5, a).unwrap(), 0.0);
        }
        assert_eq!(pinball_grad(1.0, 1.0, 0.7), 0.0);
        assert_eq!(pinball_loss(1.0, 0.0, 1.0).unwrap_err().kind(), "range");
        assert!(pinball_loss(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn huber_examples() {
        assert_eq!(modified_huber(2.0, 1.5, 1.0).unwrap(), 0.125);
        assert_eq!(modified_huber(3.0, 0.0, 1.0).unwrap(), 2.5);
        assert!(modified_huber(1.0, 0.0, 0.0).is_err());
        let d: f64 = 0.7;
        let inside = 0.5 * d * d;
        let outside = d * d - 0.5 * d * d;
        assert!((inside - outside).abs() < 1e-15);
    }

    #[test]
    fn huber_is_c1_at_seam() {
        let d = 1.3;
        let (below, above) = (d - 1e-13, d + 1e-13);
        let lb = modified_huber(below, 0.0, d).unwrap();
        let la = modified_huber(above, 0.0, d).unwrap();
        assert!((lb - la).abs() < 1e-12);
        assert!((huber_grad(below, 0.0, d) - huber_grad(above, 0.0, d)).abs() < 1e-12);
    }

    #[test]
    fn iqr_examples() {
        assert!((delta_from_iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(delta_from_iqr(&[2.0; 6]).unwrap(), DELTA_MIN);
        assert_eq!(delta_from_iqr(&[1.0, 2.0, 3.0]).unwrap_err().kind(), "insufficient_data");
    }

    proptest! {
        #[test]
        fn pinball_nonnegative(y in -10.0f64..10.0, q in -10.0f64..10.0, a in 0.01f64..0.99) {
            let l = pinball_loss(y, q, a).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, y == q);
        }

        #[test]
        fn iqr_scales(xs in proptest::collection::vec(-100.0f64..100.0, 4..40), k in 0.1f64..10.0) {
            let d = delta_from_iqr(&xs).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
            let dk = delta_from_iqr(&scaled).unwrap();
            if d > DELTA_MIN && d * k > DELTA_MIN {
                prop_assert!((dk - k * d).abs() <= 1e-9 * (1.0 + k * d));
            }
        }

        #[test]
        fn huber_is_continuous(r in 0.0f64..5.0, d in 0.1f64..3.0) {
            let eps = 1e-9;
            let a = modified_huber(r, 0.0, d).unwrap();
            let b = modified_huber(r + eps, 0.0, d).unwrap();
            prop_assert!((a - b).abs() <= eps * (r.max(d) + 1.0));
        }
    }
}
