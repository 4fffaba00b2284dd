//! Seeded synthetic regimes standing in for field sensor data.

mod dataset;
mod lyapunov;
mod phase;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSeries;

pub use dataset::{make_transition_dataset, Label, LabeledDataset, Segment, Split, SplitPart, TransitionConfig};
pub use lyapunov::{lyapunov_map, lyapunov_series, MapSpec, RosensteinConfig};
pub use phase::{classify_phase, phase_statistics, Phase, PhaseConfig, PhaseStatistics, PhaseThresholds};

/// One sinusoidal component `A·sin(k·t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub amplitude: f64,
    pub k: f64,
    pub phase: f64,
}

/// Per-cell phase offset `2π(kx·i + ky·j)` that turns an oscillation into a travelling wave.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WaveVector {
    pub kx: f64,
    pub ky: f64,
}

impl WaveVector {
    fn offset(&self, i: usize, j: usize) -> f64 {
        std::f64::consts::TAU * (self.kx * i as f64 + self.ky * j as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// `m·t + c + ε`.
    Linear { m: f64, c: f64, sigma: f64 },
    /// `A·sin(2πt/T + φ) + ε`.
    Wave {
        amplitude: f64,
        period: f64,
        phase: f64,
        sigma: f64,
        #[serde(default)]
        wavevector: WaveVector,
    },
    /// `Σ Aᵢ·sin(kᵢ·t + φᵢ) + ε`.
    MultiOscillation {
        components: Vec<Oscillator>,
        sigma: f64,
        #[serde(default)]
        wavevector: WaveVector,
    },
    /// Coupled logistic lattice with periodic four-neighbour coupling.
    Chaotic {
        r: f64,
        coupling: f64,
        #[serde(default)]
        transient: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    #[serde(flatten)]
    pub regime: Regime,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn new(regime: Regime, seed: u64) -> Self {
        Self { regime, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            regime: self.regime.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be finite")))
            }
        };
        let sigma_ok = |s: f64| {
            if s.is_finite() && s >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("noise sigma must be >= 0, got {s}")))
            }
        };
        match &self.regime {
            Regime::Linear { m, c, sigma } => {
                finite("slope", *m)?;
                finite("intercept", *c)?;
                sigma_ok(*sigma)
            }
            Regime::Wave {
                amplitude,
                period,
                phase,
                sigma,
                wavevector,
            } => {
                finite("amplitude", *amplitude)?;
                finite("phase", *phase)?;
                finite("wavevector", wavevector.kx + wavevector.ky)?;
                if !(period.is_finite() && *period > 0.0) {
                    return Err(Error::validation(format!("wave period must be > 0, got {period}")));
                }
                sigma_ok(*sigma)
            }
            Regime::MultiOscillation {
                components,
                sigma,
                wavevector,
            } => {
                if components.is_empty() {
                    return Err(Error::validation("multi-oscillation needs at least one component"));
                }
                for o in components {
                    finite("component", o.amplitude + o.k + o.phase)?;
                }
                finite("wavevector", wavevector.kx + wavevector.ky)?;
                sigma_ok(*sigma)
            }
            Regime::Chaotic { r, coupling, .. } => {
                if !(*r > 0.0 && *r <= 4.0) {
                    return Err(Error::validation(format!("logistic r must lie in (0, 4], got {r}")));
                }
                if !(0.0..=1.0).contains(coupling) {
                    return Err(Error::validation(format!("coupling must lie in [0, 1], got {coupling}")));
                }
                Ok(())
            }
        }
    }
}

/// Logistic map `r·x·(1 − x)`.
pub fn logistic(r: f64, x: f64) -> f64 {
    r * x * (1.0 - x)
}

/// Renders a regime onto a `width × height` grid for `n_steps` steps.
pub fn generate(spec: &RegimeSpec, width: usize, height: usize, n_steps: usize) -> Result<GridSeries> {
    spec.validate()?;
    if width < 3 || height < 3 {
        return Err(Error::validation(format!("grid {width}x{height} below 3x3")));
    }
    if n_steps == 0 {
        return Err(Error::validation("n_steps must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_cells = width * height;
    let mut values = vec![0.0; n_steps * n_cells];
    let noise = |rng: &mut ChaCha8Rng, sigma: f64, values: &mut [f64]| {
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            for v in values.iter_mut() {
                *v += normal.sample(rng);
            }
        }
    };
    match &spec.regime {
        Regime::Linear { m, c, sigma } => {
            for t in 0..n_steps {
                let y = m * t as f64 + c;
                values[t * n_cells..(t + 1) * n_cells].fill(y);
            }
            noise(&mut rng, *sigma, &mut values);
        }
        Regime::Wave {
            amplitude,
            period,
            phase,
            sigma,
            wavevector,
        } => {
            let omega = std::f64::consts::TAU / period;
            fill_cells(&mut values, width, height, |t, i, j| {
                amplitude * (omega * t as f64 + phase + wavevector.offset(i, j)).sin()
            });
            noise(&mut rng, *sigma, &mut values);
        }
        Regime::MultiOscillation {
            components,
            sigma,
            wavevector,
        } => {
            fill_cells(&mut values, width, height, |t, i, j| {
                let off = wavevector.offset(i, j);
                components
                    .iter()
                    .map(|o| o.amplitude * (o.k * t as f64 + o.phase + off).sin())
                    .sum()
            });
            noise(&mut rng, *sigma, &mut values);
        }
        Regime::Chaotic { r, coupling, transient } => {
            let unit = Uniform::new(0.05, 0.95).expect("valid range");
            let mut x: Vec<f64> = (0..n_cells).map(|_| unit.sample(&mut rng)).collect();
            let mut fx = vec![0.0; n_cells];
            for step in 0..transient + n_steps {
                if step >= *transient {
                    let t = step - transient;
                    values[t * n_cells..(t + 1) * n_cells].copy_from_slice(&x);
                }
                cml_step(&mut x, &mut fx, width, height, *r, *coupling);
            }
        }
    }
    GridSeries::new(width, height, n_steps, values)
}

fn fill_cells(values: &mut [f64], width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f64) {
    let n_cells = width * height;
    for (k, v) in values.iter_mut().enumerate() {
        let t = k / n_cells;
        let c = k % n_cells;
        *v = f(t, c / height, c % height);
    }
}

/// One synchronous lattice update; cell index is `i·height + j`.
fn cml_step(x: &mut [f64], fx: &mut [f64], width: usize, height: usize, r: f64, eps: f64) {
    for (f, &v) in fx.iter_mut().zip(x.iter()) {
        *f = logistic(r, v);
    }
    for i in 0..width {
        let (ip, im) = ((i + 1) % width, (i + width - 1) % width);
        for j in 0..height {
            let (jp, jm) = ((j + 1) % height, (j + height - 1) % height);
            let nb = fx[ip * height + j] + fx[im * height + j] + fx[i * height + jp] + fx[i * height + jm];
            let own = fx[i * height + j];
            // convex combination keeps the state in [0, 1]
            x[i * height + j] = ((1.0 - eps) * own + eps * 0.25 * nb).clamp(0.0, 1.0);
        }
    }
}

/// `y(t) − (m·t + c)` pointwise.
pub fn residual_series(series: &[f64], m: f64, c: f64) -> Vec<f64> {
    series
        .iter()
        .enumerate()
        .map(|(t, y)| y - (m * t as f64 + c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(sigma: f64) -> Regime {
        Regime::Wave {
            amplitude: 1.0,
            period: 8.0,
            phase: 0.0,
            sigma,
            wavevector: WaveVector::default(),
        }
    }

    #[test]
    fn linear_constant() {
        let spec = RegimeSpec::new(Regime::Linear { m: 0.0, c: 5.0, sigma: 0.0 }, 1);
        let g = generate(&spec, 4, 3, 20).unwrap();
        assert!(g.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn wave_zero_crossing() {
        let g = generate(&RegimeSpec::new(wave(0.0), 0), 3, 3, 10).unwrap();
        assert!(g.get(4, 1, 1).abs() < 1e-15);
        for t in 0..10 {
            let closed = (std::f64::consts::TAU * t as f64 / 8.0).sin();
            assert!((g.get(t, 2, 0) - closed).abs() <= 1e-12);
        }
    }

    #[test]
    fn multi_oscillation_closed_form() {
        let comps = vec![
            Oscillator { amplitude: 1.0, k: 0.3, phase: 0.1 },
            Oscillator { amplitude: 0.5, k: 1.7, phase: -0.4 },
        ];
        let wv = WaveVector { kx: 0.1, ky: 0.05 };
        let spec = RegimeSpec::new(
            Regime::MultiOscillation { components: comps.clone(), sigma: 0.0, wavevector: wv },
            3,
        );
        let g = generate(&spec, 5, 4, 50).unwrap();
        for t in [0, 7, 49] {
            let (i, j) = (3, 2);
            let off = std::f64::consts::TAU * (0.1 * 3.0 + 0.05 * 2.0);
            let want: f64 = comps.iter().map(|o| o.amplitude * (o.k * t as f64 + o.phase + off).sin()).sum();
            assert!((g.get(t, i, j) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn uncoupled_lattice_matches_scalar_map() {
        let spec = RegimeSpec::new(Regime::Chaotic { r: 4.0, coupling: 0.0, transient: 0 }, 42);
        let g = generate(&spec, 3, 4, 60).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut x = g.get(0, i, j);
                for t in 1..60 {
                    x = 4.0 * x * (1.0 - x);
                    assert_eq!(g.get(t, i, j), x, "cell ({i},{j}) step {t}");
                }
            }
        }
    }

    #[test]
    fn noise_has_requested_variance() {
        let spec = RegimeSpec::new(Regime::Linear { m: 0.0, c: 0.0, sigma: 2.0 }, 9);
        let g = generate(&spec, 10, 10, 400).unwrap();
        let v = g.values();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 4.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            Regime::Linear { m: 1.0, c: 0.0, sigma: -1.0 },
            Regime::Wave {
                amplitude: 1.0,
                period: 0.0,
                phase: 0.0,
                sigma: 0.0,
                wavevector: WaveVector::default(),
            },
            Regime::Chaotic { r: 4.5, coupling: 0.1, transient: 0 },
            Regime::Chaotic { r: 3.9, coupling: 1.5, transient: 0 },
        ];
        for r in bad {
            let err = generate(&RegimeSpec::new(r, 0), 4, 4, 4).unwrap_err();
            assert_eq!(err.kind(), "validation");
        }
        assert!(generate(&RegimeSpec::new(wave(0.0), 0), 2, 4, 4).is_err());
    }

    #[test]
    fn residuals() {
        assert_eq!(residual_series(&[3.0, 5.0, 7.0], 2.0, 3.0), vec![0.0, 0.0, 0.0]);
        assert_eq!(residual_series(&[4.0, 5.0, 6.0], 0.0, 4.0), vec![0.0, 1.0, 2.0]);
        let line: Vec<f64> = (0..10).map(|t| 2.0 * t as f64 + 1.0).collect();
        assert!(residual_series(&line, 2.0, 1.0).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = RegimeSpec::new(Regime::Chaotic { r: 3.9, coupling: 0.3, transient: 50 }, 17);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"chaotic\""));
        let back: RegimeSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    proptest! {
        #[test]
        fn deterministic(seed in any::<u64>(), sigma in 0.0f64..2.0) {
            let spec = RegimeSpec::new(wave(sigma), seed);
            let a = generate(&spec, 4, 4, 30).unwrap();
            let b = generate(&spec, 4, 4, 30).unwrap();
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn lattice_stays_in_unit_interval(r in 0.01f64..=4.0, eps in 0.0f64..=1.0, seed in any::<u64>()) {
            let spec = RegimeSpec::new(Regime::Chaotic { r, coupling: eps, transient: 5 }, seed);
            let g = generate(&spec, 5, 5, 200).unwrap();
            prop_assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn noiseless_linear_closed_form(m in -5.0f64..5.0, c in -100.0f64..100.0) {
            let spec = RegimeSpec::new(Regime::Linear { m, c, sigma: 0.0 }, 0);
            let g = generate(&spec, 3, 3, 40).unwrap();
            for t in 0..40 {
                prop_assert!((g.get(t, 1, 2) - (m * t as f64 + c)).abs() <= 1e-12);
            }
        }
    }
}
