//! Temporal permutation entropy and a sliding-window pattern counter.

use serde::{Deserialize, Serialize};

use super::ordinal::{entropy_from_counts, factorial, pattern_code, TieRule, MAX_PATTERN_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    E,
    Two,
}

impl LogBase {
    /// Multiplier taking nats to this base.
    pub fn from_nats(self) -> f64 {
        match self {
            LogBase::E => 1.0,
            LogBase::Two => std::f64::consts::LOG2_E,
        }
    }
}

/// Minimum series length for one full embedding of order `d` and delay `tau`.
pub fn embedding_span(d: usize, tau: usize) -> usize {
    (d - 1) * tau + 1
}

/// Pattern codes of every delay embedding `[x(t), x(t+τ), …]` of `series`.
pub fn ordinal_codes(series: &[f64], d: usize, tau: usize, tie_rule: TieRule) -> Vec<u64> {
    let span = embedding_span(d, tau);
    if series.len() < span {
        return Vec::new();
    }
    let mut window = vec![0.0; d];
    (0..=series.len() - span)
        .map(|start| {
            for (k, w) in window.iter_mut().enumerate() {
                *w = series[start + k * tau];
            }
            pattern_code(&window, tie_rule)
        })
        .collect()
}

/// Permutation entropy of a scalar series over all sliding windows.
pub fn temporal_pe(
    series: &[f64],
    d: usize,
    tau: usize,
    log_base: LogBase,
    normalize: bool,
) -> Result<f64> {
    temporal_pe_with(series, d, tau, log_base, normalize, TieRule::default())
}

pub fn temporal_pe_with(
    series: &[f64],
    d: usize,
    tau: usize,
    log_base: LogBase,
    normalize: bool,
    tie_rule: TieRule,
) -> Result<f64> {
    if !(2..=MAX_PATTERN_LEN).contains(&d) {
        return Err(Error::invalid(format!("embedding dimension {d} outside 2..=20")));
    }
    if tau == 0 {
        return Err(Error::invalid("delay must be >= 1"));
    }
    let span = embedding_span(d, tau);
    if series.len() < span {
        return Err(Error::insufficient("temporal permutation entropy", span, series.len()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let mut codes = ordinal_codes(series, d, tau, tie_rule);
    codes.sort_unstable();
    let total = codes.len() as u64;
    let counts = codes.chunk_by(|a, b| a == b).map(|run| run.len() as u64);
    let h = entropy_from_counts(counts, total);
    let max = (factorial(d) as f64).ln();
    Ok(scale_entropy(h, max, log_base, normalize))
}

/// Clamps a nat-valued entropy into `[0, max]` and applies base / normalization.
pub(crate) fn scale_entropy(h_nats: f64, max_nats: f64, log_base: LogBase, normalize: bool) -> f64 {
    let h = h_nats.clamp(0.0, max_nats);
    if normalize {
        if max_nats > 0.0 {
            (h / max_nats).min(1.0)
        } else {
            0.0
        }
    } else {
        h * log_base.from_nats()
    }
}

/// Table of `c·ln c` for integer counts.
#[derive(Debug, Clone)]
pub struct CountLogTable(Vec<f64>);

impl CountLogTable {
    pub fn new(max_count: usize) -> Self {
        Self(
            (0..=max_count)
                .map(|c| if c < 2 { 0.0 } else { c as f64 * (c as f64).ln() })
                .collect(),
        )
    }

    #[inline]
    fn get(&self, c: u32) -> f64 {
        self.0[c as usize]
    }
}

/// Pattern histogram over a sliding window with O(1) entropy queries.
///
/// Keeps `Σ c ln c` incrementally, so `H = ln N − S/N`.
#[derive(Debug, Clone)]
pub struct SlidingEntropy {
    counts: Vec<u32>,
    total: u32,
    active: u32,
    sum_clnc: f64,
}

impl SlidingEntropy {
    pub fn new(n_patterns: usize) -> Self {
        Self {
            counts: vec![0; n_patterns],
            total: 0,
            active: 0,
            sum_clnc: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, code: u64, table: &CountLogTable) {
        let c = &mut self.counts[code as usize];
        if *c == 0 {
            self.active += 1;
        }
        self.sum_clnc += table.get(*c + 1) - table.get(*c);
        *c += 1;
        self.total += 1;
    }

    #[inline]
    pub fn remove(&mut self, code: u64, table: &CountLogTable) {
        let c = &mut self.counts[code as usize];
        debug_assert!(*c > 0, "removing a pattern that is not in the window");
        self.sum_clnc += table.get(*c - 1) - table.get(*c);
        *c -= 1;
        if *c == 0 {
            self.active -= 1;
        }
        self.total -= 1;
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn count(&self, code: u64) -> u32 {
        self.counts[code as usize]
    }

    /// Entropy in nats, clamped into `[0, ln n_patterns]`.
    pub fn entropy_nats(&self) -> f64 {
        if self.active <= 1 {
            return 0.0;
        }
        let n = self.total as f64;
        let h = n.ln() - self.sum_clnc / n;
        h.clamp(0.0, (self.counts.len() as f64).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_series_is_zero() {
        let xs = vec![5.0; 50];
        for d in 3..=7 {
            assert_eq!(temporal_pe(&xs, d, 1, LogBase::E, false).unwrap(), 0.0);
        }
    }

    #[test]
    fn seven_point_series_base_two() {
        // ascending pairs: (4,7) (7,9) (9,10) (6,11); descending: (10,6) (11,3)
        let xs = [4.0, 7.0, 9.0, 10.0, 6.0, 11.0, 3.0];
        let expected = -(4.0f64 / 6.0) * (4.0f64 / 6.0).log2() - (2.0f64 / 6.0) * (2.0f64 / 6.0).log2();
        let h = temporal_pe(&xs, 2, 1, LogBase::Two, false).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.918_295_834).abs() < 1e-9);
    }

    #[test]
    fn too_short_reports_minimum() {
        let err = temporal_pe(&[1.0, 2.0, 3.0], 3, 2, LogBase::E, false).unwrap_err();
        match err {
            Error::InsufficientData { needed, got, .. } => {
                assert_eq!(needed, 5);
                assert_eq!(got, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_noise_near_log_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let h = temporal_pe(&xs, 3, 1, LogBase::E, false).unwrap();
        let max = 6f64.ln();
        assert!((h - max).abs() / max < 0.02, "h = {h}");
    }

    #[test]
    fn sliding_matches_batch_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..600).map(|_| rng.random_range(0..4) as f64).collect();
        let codes = ordinal_codes(&xs, 3, 1, TieRule::EarlierLower);
        let window = 40;
        let table = CountLogTable::new(window);
        let mut sliding = SlidingEntropy::new(6);
        for (k, &c) in codes.iter().enumerate() {
            sliding.add(c, &table);
            if k >= window {
                sliding.remove(codes[k - window], &table);
            }
            if k + 1 >= window {
                let lo = k + 1 - window;
                let mut slice = codes[lo..=k].to_vec();
                slice.sort_unstable();
                let counts = slice.chunk_by(|a, b| a == b).map(|r| r.len() as u64);
                let exact = entropy_from_counts(counts, window as u64);
                assert!((sliding.entropy_nats() - exact).abs() < 1e-10);
            }
        }
    }
}
