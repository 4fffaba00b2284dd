use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::lyapunov::{lyapunov_series, RosensteinConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Linear,
    Transitional,
    PreFailure,
}

/// Decision thresholds, fitted on a seeded regime corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub version: String,
    /// Exponent above which the series counts as chaotic.
    pub lyapunov: f64,
    /// Normalized residual RMS below which the series is linear.
    pub residual_low: f64,
    /// Share of residual power near the dominant frequency that marks an oscillation.
    pub oscillation: f64,
    /// Normalized residual RMS from which a non-oscillating series is pre-failure.
    pub residual_high: f64,
    /// Normalized spectral entropy above which the spectrum counts as broadband.
    pub spread: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self {
            version: "phase-v1".into(),
            lyapunov: 0.2,
            residual_low: 0.05,
            oscillation: 0.5,
            residual_high: 0.5,
            spread: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    /// Trailing samples analysed.
    pub window: usize,
    pub thresholds: PhaseThresholds,
    pub lyapunov: RosensteinConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            window: 1024,
            thresholds: PhaseThresholds::default(),
            lyapunov: RosensteinConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatistics {
    /// RMS of the least-squares line residual over the series standard deviation.
    pub residual_rms: f64,
    pub lyapunov: f64,
    pub oscillation_ratio: f64,
    pub spectral_spread: f64,
}

/// Decision statistics over the trailing `cfg.window` samples.
pub fn phase_statistics(series: &[f64], cfg: &PhaseConfig) -> Result<PhaseStatistics> {
    if series.len() < cfg.window || cfg.window < 8 {
        return Err(Error::insufficient("phase window", cfg.window.max(8), series.len()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let y = &series[series.len() - cfg.window..];
    let n = y.len() as f64;
    let mt = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sty, mut stt, mut syy) = (0.0, 0.0, 0.0);
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - mt;
        sty += dt * (v - my);
        stt += dt * dt;
        syy += (v - my).powi(2);
    }
    let slope = sty / stt;
    let resid: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(t, v)| v - my - slope * (t as f64 - mt))
        .collect();
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    // rounding noise of an exact line is not a residual
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let residual_rms = if syy <= 0.0 || (rss / n).sqrt() <= 1e-9 * scale {
        0.0
    } else {
        (rss / syy).sqrt()
    };

    let (oscillation_ratio, spectral_spread) = if residual_rms == 0.0 {
        (0.0, 0.0)
    } else {
        spectrum_shape(&resid)
    };
    let lyapunov = lyapunov_series(y, &cfg.lyapunov)?;
    Ok(PhaseStatistics {
        residual_rms,
        lyapunov,
        oscillation_ratio,
        spectral_spread,
    })
}

/// Dominant-peak power share and normalized spectral entropy of a series.
fn spectrum_shape(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total <= 0.0 || power.len() < 2 {
        return (0.0, 0.0);
    }
    let peak = power
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let lo = peak.saturating_sub(1);
    let hi = (peak + 1).min(power.len() - 1);
    let ratio = power[lo..=hi].iter().sum::<f64>() / total;
    let h: f64 = power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    (ratio, h / (power.len() as f64).ln())
}

pub fn classify_phase(series: &[f64], cfg: &PhaseConfig) -> Result<Phase> {
    let s = phase_statistics(series, cfg)?;
    let th = &cfg.thresholds;
    if s.residual_rms < th.residual_low && s.lyapunov <= th.lyapunov {
        return Ok(Phase::Linear);
    }
    if s.lyapunov > th.lyapunov || s.spectral_spread > th.spread {
        return Ok(Phase::PreFailure);
    }
    if s.oscillation_ratio > th.oscillation || s.residual_rms < th.residual_high {
        return Ok(Phase::Transitional);
    }
    Ok(Phase::PreFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, Oscillator, Regime, RegimeSpec, WaveVector};
    use proptest::prelude::*;

    fn cell(regime: Regime, seed: u64, n: usize) -> Vec<f64> {
        generate(&RegimeSpec::new(regime, seed), 3, 3, n).unwrap().cell_series(1, 1)
    }

    #[test]
    fn line_is_linear() {
        let y: Vec<f64> = (0..1100).map(|t| 0.3 * t as f64 - 2.0).collect();
        assert_eq!(classify_phase(&y, &PhaseConfig::default()).unwrap(), Phase::Linear);
    }

    #[test]
    fn large_sine_is_transitional() {
        let y = cell(
            Regime::Wave { amplitude: 20.0, period: 37.0, phase: 0.4, sigma: 0.0, wavevector: WaveVector::default() },
            0,
            1100,
        );
        assert_eq!(classify_phase(&y, &PhaseConfig::default()).unwrap(), Phase::Transitional);
    }

    #[test]
    fn logistic_chaos_is_pre_failure() {
        let y = cell(Regime::Chaotic { r: 4.0, coupling: 0.0, transient: 10 }, 5, 1100);
        let cfg = PhaseConfig::default();
        assert!(phase_statistics(&y, &cfg).unwrap().lyapunov > cfg.thresholds.lyapunov);
        assert_eq!(classify_phase(&y, &cfg).unwrap(), Phase::PreFailure);
    }

    #[test]
    fn calibration_corpus_is_separated() {
        let cfg = PhaseConfig::default();
        for seed in 0..4u64 {
            let period = 20.0 + 7.0 * seed as f64;
            let wave = cell(
                Regime::Wave { amplitude: 3.0, period, phase: 0.1 * seed as f64, sigma: 0.05, wavevector: WaveVector::default() },
                seed,
                1024,
            );
            assert_eq!(classify_phase(&wave, &cfg).unwrap(), Phase::Transitional, "wave {seed}");
            let chaos = cell(Regime::Chaotic { r: 3.9 + 0.025 * seed as f64, coupling: 0.2, transient: 50 }, seed, 1024);
            assert_eq!(classify_phase(&chaos, &cfg).unwrap(), Phase::PreFailure, "chaos {seed}");
            let comps = (0..4)
                .map(|k| Oscillator { amplitude: 1.0, k: 0.37 * (k as f64 + 1.0) + 0.05 * seed as f64, phase: k as f64 })
                .collect();
            let multi = cell(Regime::MultiOscillation { components: comps, sigma: 0.3, wavevector: WaveVector::default() }, seed, 1024);
            assert_eq!(classify_phase(&multi, &cfg).unwrap(), Phase::PreFailure, "multi {seed}");
        }
    }

    #[test]
    fn short_series_rejected() {
        let err = classify_phase(&[1.0; 100], &PhaseConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "insufficient_data");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn noiseless_lines_are_linear(m in -10.0f64..10.0, c in -1000.0f64..1000.0) {
            let y = cell(Regime::Linear { m, c, sigma: 0.0 }, 0, 1024);
            prop_assert_eq!(classify_phase(&y, &PhaseConfig::default()).unwrap(), Phase::Linear);
        }
    }
}
