//! The fixed 70-entry entropy feature recipe.
//!
//! | index | count | feature |
//! |-------|-------|---------|
//! | 0–24  | 25 | temporal PE, d ∈ {3..7} × τ ∈ {1,2,3,5,8}, grid mean |
//! | 25–34 | 10 | spatial cross PE per radius: grid mean, grid variance |
//! | 35–39 | 5  | multiscale STPE, s ∈ {1,2,4,8,16}, grid mean |
//! | 40–45 | 6  | cross-sensor ordinal synchrony at 6 lags |
//! | 46–50 | 5  | \|∇H\| mean, max, std; mean gx; mean gy |
//! | 51–54 | 4  | dominant-pattern mean run length, d ∈ {3..6} |
//! | 55–57 | 3  | PE of first differences, d = 3, τ ∈ {1,2,3} |
//! | 58–61 | 4  | Pearson coupling of per-cell H between adjacent scales |
//! | 62–63 | 2  | grid-mean entropy rate over windows {16, 64} |
//! | 64–69 | 6  | STPE field mean, std, min, max, skewness, excess kurtosis |
//!
//! All window statistics use the trailing `history` steps ending at `t`.
//! Multiscale blocks are aligned to absolute time, so only blocks that lie
//! fully inside the history contribute.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derivative::{entropy_gradient, entropy_rate};
use super::entropy::{ordinal_codes, CountLogTable, SlidingEntropy};
use super::field::{spatial_cross, stpe_field, EntropyField};
use super::ordinal::{entropy_from_counts, factorial, pattern_code};
use super::{radius_cells, EntropyMode, StpeConfig, MULTISCALE_FACTORS, SPATIAL_RADII_M};
use crate::error::{Error, Result};
use crate::grid::GridSeries;

pub const FEATURE_COUNT: usize = 70;
pub const RECIPE_VERSION: &str = "stpe70-v1";

const TEMPORAL_DIMS: [usize; 5] = [3, 4, 5, 6, 7];
const TEMPORAL_DELAYS: [usize; 5] = [1, 2, 3, 5, 8];
const PERSISTENCE_DIMS: [usize; 4] = [3, 4, 5, 6];
const NOISE_DELAYS: [usize; 3] = [1, 2, 3];
const SYNC_LAGS: [usize; 6] = [0, 1, 2, 4, 8, 16];
const RATE_WINDOWS: [usize; 2] = [16, 64];

/// Column names in recipe order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    for d in TEMPORAL_DIMS {
        for tau in TEMPORAL_DELAYS {
            names.push(format!("tpe_d{d}_tau{tau}"));
        }
    }
    for r in SPATIAL_RADII_M {
        names.push(format!("spe_r{r}_mean"));
        names.push(format!("spe_r{r}_var"));
    }
    for s in MULTISCALE_FACTORS {
        names.push(format!("mstpe_s{s}"));
    }
    for lag in SYNC_LAGS {
        names.push(format!("sync_lag{lag}"));
    }
    for n in ["grad_mag_mean", "grad_mag_max", "grad_mag_std", "grad_gx_mean", "grad_gy_mean"] {
        names.push(n.to_string());
    }
    for d in PERSISTENCE_DIMS {
        names.push(format!("persist_d{d}"));
    }
    for tau in NOISE_DELAYS {
        names.push(format!("noise_pe_tau{tau}"));
    }
    for w in MULTISCALE_FACTORS.windows(2) {
        names.push(format!("coupling_s{}_s{}", w[0], w[1]));
    }
    for w in RATE_WINDOWS {
        names.push(format!("rate_w{w}"));
    }
    for n in ["stpe_mean", "stpe_std", "stpe_min", "stpe_max", "stpe_skew", "stpe_kurt"] {
        names.push(n.to_string());
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureRecipe {
    /// Trailing steps summarized by every window statistic.
    pub history: usize,
    /// Entropy field behind the gradient, rate and aggregate features.
    pub field: StpeConfig,
    /// Entropy window of that field.
    pub field_window: usize,
    /// Overrides the grid's own cell spacing when converting radii.
    pub cell_spacing: Option<f64>,
    /// Number of sampled cell pairs for synchrony.
    pub sync_pairs: usize,
    pub seed: u64,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        Self {
            history: 128,
            field: StpeConfig {
                mode: EntropyMode::Factored,
                ..StpeConfig::default()
            },
            field_window: 64,
            cell_spacing: None,
            sync_pairs: 64,
            seed: 0x5eed,
        }
    }
}

impl FeatureRecipe {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        let longest_temporal = (TEMPORAL_DIMS[4] - 1) * TEMPORAL_DELAYS[4] + 1;
        let min_history = longest_temporal.max(4 * MULTISCALE_FACTORS[4]);
        if self.history < min_history {
            return Err(Error::validation(format!(
                "feature history {} below minimum {min_history}",
                self.history
            )));
        }
        if self.field_window == 0 || self.sync_pairs == 0 {
            return Err(Error::validation("field window and sync pairs must be positive"));
        }
        Ok(())
    }

    /// Earliest step with a complete feature vector.
    pub fn earliest_step(&self) -> usize {
        let field_valid = self.field.first_embedding_step() + self.field_window - 1;
        (self.history - 1).max(field_valid + RATE_WINDOWS[1])
    }
}

/// One 70-entry feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyFeatureVector {
    pub t: usize,
    pub features: Vec<f64>,
    pub recipe_version: String,
}

impl EntropyFeatureVector {
    /// Writes rows as `t,f0,…,f69`.
    pub fn write_csv<W: Write>(rows: &[EntropyFeatureVector], mut w: W) -> Result<()> {
        write!(w, "t")?;
        for k in 0..FEATURE_COUNT {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for row in rows {
            write!(w, "{}", row.t)?;
            for v in &row.features {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<EntropyFeatureVector>> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty feature CSV".into()))??;
        let cols = header.split(',').count();
        if cols != FEATURE_COUNT + 1 || !header.starts_with("t,f0") {
            return Err(Error::Parse(format!("feature CSV header has {cols} columns")));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let t = parts
                .next()
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("feature row step: {e}")))?;
            let features = parts
                .map(|p| p.parse::<f64>().map_err(|e| Error::Parse(format!("feature value: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if features.len() != FEATURE_COUNT {
                return Err(Error::shape("feature row", FEATURE_COUNT, features.len()));
            }
            rows.push(EntropyFeatureVector {
                t,
                features,
                recipe_version: RECIPE_VERSION.to_string(),
            });
        }
        Ok(rows)
    }
}

/// Sliding PE of one delay embedding over every cell.
struct TemporalTrack {
    span: usize,
    codes: Vec<Vec<u64>>,
    windows: Vec<SlidingEntropy>,
    max_nats: f64,
}

impl TemporalTrack {
    fn new(series: &[Vec<f64>], d: usize, tau: usize) -> Self {
        let codes: Vec<Vec<u64>> = series
            .iter()
            .map(|s| ordinal_codes(s, d, tau, Default::default()))
            .collect();
        let n = factorial(d) as usize;
        Self {
            span: (d - 1) * tau,
            windows: vec![SlidingEntropy::new(n); series.len()],
            codes,
            max_nats: (n as f64).ln(),
        }
    }

    /// Admits the pattern ending at `t` and drops the one starting at `t − history`.
    fn advance(&mut self, t: usize, history: usize, table: &CountLogTable) {
        for (codes, win) in self.codes.iter().zip(self.windows.iter_mut()) {
            if t >= self.span && t - self.span < codes.len() {
                win.add(codes[t - self.span], table);
            }
            if t >= history {
                let old = t - history;
                if old + self.span <= t - 1 && old < codes.len() {
                    win.remove(codes[old], table);
                }
            }
        }
    }

    fn mean_normalized(&self) -> f64 {
        let sum: f64 = self.windows.iter().map(|w| w.entropy_nats() / self.max_nats).sum();
        sum / self.windows.len() as f64
    }
}

/// Sliding spatial-cross PE at one radius.
struct SpatialTrack {
    codes: Vec<Vec<u64>>,
    windows: Vec<SlidingEntropy>,
}

/// Streaming extractor producing feature rows for one grid.
pub struct FeatureExtractor<'g> {
    grid: &'g GridSeries,
    recipe: FeatureRecipe,
    field: EntropyField,
    table: CountLogTable,
    temporal: Vec<TemporalTrack>,
    noise: Vec<TemporalTrack>,
    spatial: Vec<SpatialTrack>,
    /// Per scale, per interior cell: temporal (d = 3) and spatial codes per block.
    multiscale: Vec<Vec<(Vec<u64>, Vec<u64>)>>,
    interior: Vec<(usize, usize)>,
    sync_codes: Vec<Vec<u64>>,
    sync_pairs: Vec<(usize, usize)>,
    next_t: usize,
}

impl<'g> FeatureExtractor<'g> {
    pub fn new(grid: &'g GridSeries, recipe: &FeatureRecipe) -> Result<Self> {
        recipe.validate()?;
        let (w, h) = (grid.width(), grid.height());
        if w < 3 || h < 3 {
            return Err(Error::Boundary(format!("{w}x{h} grid too small for spatial features")));
        }
        let t_min = recipe.earliest_step();
        if grid.n_steps() <= t_min {
            return Err(Error::insufficient("feature history", t_min + 1, grid.n_steps()));
        }
        let field = stpe_field(grid, &recipe.field, recipe.field_window)?;

        let series: Vec<Vec<f64>> = (0..w)
            .flat_map(|i| (0..h).map(move |j| (i, j)))
            .map(|(i, j)| grid.cell_series(i, j))
            .collect();
        let diffs: Vec<Vec<f64>> = series
            .iter()
            .map(|s| s.windows(2).map(|p| p[1] - p[0]).collect())
            .collect();

        let temporal = TEMPORAL_DIMS
            .iter()
            .flat_map(|&d| TEMPORAL_DELAYS.iter().map(move |&tau| (d, tau)))
            .map(|(d, tau)| TemporalTrack::new(&series, d, tau))
            .collect();
        let noise = NOISE_DELAYS
            .iter()
            .map(|&tau| TemporalTrack::new(&diffs, 3, tau))
            .collect();

        let spacing = recipe.cell_spacing.unwrap_or(grid.cell_spacing);
        let r_max = (w.min(h) - 1) / 2;
        let spatial = SPATIAL_RADII_M
            .iter()
            .map(|&m| {
                let r = radius_cells(m, spacing).min(r_max);
                let cells: Vec<(usize, usize)> = (r..w - r)
                    .flat_map(|i| (r..h - r).map(move |j| (i, j)))
                    .collect();
                let codes = cells
                    .iter()
                    .map(|&(i, j)| {
                        (0..grid.n_steps())
                            .map(|t| pattern_code(&spatial_cross(grid, i, j, t, r), Default::default()))
                            .collect()
                    })
                    .collect();
                SpatialTrack {
                    windows: vec![SlidingEntropy::new(120); cells.len()],
                    codes,
                }
            })
            .collect();

        let interior: Vec<(usize, usize)> = (1..w - 1)
            .flat_map(|i| (1..h - 1).map(move |j| (i, j)))
            .collect();
        let multiscale = MULTISCALE_FACTORS
            .iter()
            .map(|&s| -> Result<Vec<(Vec<u64>, Vec<u64>)>> {
                let coarse = grid.coarse_grain(s)?;
                Ok(interior
                    .iter()
                    .map(|&(i, j)| {
                        let cs = coarse.cell_series(i, j);
                        let tcodes = ordinal_codes(&cs, 3, 1, Default::default());
                        let scodes = (0..coarse.n_steps())
                            .map(|b| pattern_code(&spatial_cross(&coarse, i, j, b, 1), Default::default()))
                            .collect();
                        (tcodes, scodes)
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;

        let sync_codes = series
            .iter()
            .map(|s| ordinal_codes(s, 3, 1, Default::default()))
            .collect();
        let n_cells = w * h;
        let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
        let sync_pairs = (0..recipe.sync_pairs)
            .map(|_| {
                let a = rng.random_range(0..n_cells);
                let mut b = rng.random_range(0..n_cells - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            })
            .collect();

        Ok(Self {
            grid,
            table: CountLogTable::new(recipe.history + 1),
            recipe: recipe.clone(),
            field,
            temporal,
            noise,
            spatial,
            multiscale,
            interior,
            sync_codes,
            sync_pairs,
            next_t: 0,
        })
    }

    /// Whether the backing entropy field was undersampled.
    pub fn undersampled(&self) -> bool {
        self.field.undersampled
    }

    pub fn field(&self) -> &EntropyField {
        &self.field
    }

    pub fn earliest_step(&self) -> usize {
        self.recipe.earliest_step()
    }

    fn advance_to(&mut self, t: usize) {
        let hist = self.recipe.history;
        while self.next_t <= t {
            let u = self.next_t;
            for track in self.temporal.iter_mut() {
                track.advance(u, hist, &self.table);
            }
            // the difference series is one step shorter: index u−1 ends at step u
            if u >= 1 {
                for track in self.noise.iter_mut() {
                    track.advance(u - 1, hist - 1, &self.table);
                }
            }
            for sp in self.spatial.iter_mut() {
                for (codes, win) in sp.codes.iter().zip(sp.windows.iter_mut()) {
                    win.add(codes[u], &self.table);
                    if u >= hist {
                        win.remove(codes[u - hist], &self.table);
                    }
                }
            }
            self.next_t += 1;
        }
    }

    /// Feature row at `t`. Calls must use non-decreasing `t`.
    pub fn vector_at(&mut self, t: usize) -> Result<EntropyFeatureVector> {
        let t_min = self.earliest_step();
        if t < t_min || t >= self.grid.n_steps() {
            return Err(Error::insufficient(
                format!("feature vector at step {t} (earliest valid step {t_min})"),
                t_min,
                t,
            ));
        }
        if t + 1 < self.next_t {
            return Err(Error::Range(format!("feature extractor already advanced past step {t}")));
        }
        self.advance_to(t);
        let mut f = Vec::with_capacity(FEATURE_COUNT);

        for track in &self.temporal {
            f.push(track.mean_normalized());
        }

        let ln120 = 120f64.ln();
        for sp in &self.spatial {
            let vals: Vec<f64> = sp.windows.iter().map(|w| w.entropy_nats() / ln120).collect();
            let (mean, var) = mean_var(&vals);
            f.push(mean);
            f.push(var);
        }

        let per_scale = self.multiscale_cells(t);
        for cells in &per_scale {
            f.push(mean_var(cells).0);
        }

        f.extend(self.synchrony(t));

        let grad = entropy_gradient(&self.field, t)?;
        let mags: Vec<f64> = grad.present().map(|g| g.magnitude).collect();
        let (mag_mean, mag_var) = mean_var(&mags);
        f.push(mag_mean);
        f.push(mags.iter().cloned().fold(0.0, f64::max));
        f.push(mag_var.sqrt());
        f.push(mean_var(&grad.present().map(|g| g.gx).collect::<Vec<_>>()).0);
        f.push(mean_var(&grad.present().map(|g| g.gy).collect::<Vec<_>>()).0);

        for (k, _) in PERSISTENCE_DIMS.iter().enumerate() {
            // persistence dims d = 3..6 at τ = 1 share the temporal tracks
            let track = &self.temporal[k * TEMPORAL_DELAYS.len()];
            f.push(self.persistence(track, t));
        }

        for track in &self.noise {
            f.push(track.mean_normalized());
        }

        for pair in per_scale.windows(2) {
            f.push(pearson(&pair[0], &pair[1]));
        }

        for w in RATE_WINDOWS {
            let rate = entropy_rate(&self.field, t, w)?;
            let vals: Vec<f64> = rate.present().collect();
            f.push(mean_var(&vals).0);
        }

        let frame = self.field.valid_values(t);
        let (mean, var) = mean_var(&frame);
        let std = var.sqrt();
        let (skew, kurt) = if std > 0.0 {
            let n = frame.len() as f64;
            let m3 = frame.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
            let m4 = frame.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
            (m3 / std.powi(3), m4 / var.powi(2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        f.push(mean);
        f.push(std);
        f.push(frame.iter().cloned().fold(f64::INFINITY, f64::min));
        f.push(frame.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        f.push(skew);
        f.push(kurt);

        debug_assert_eq!(f.len(), FEATURE_COUNT);
        if let Some(k) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("feature {k} is not finite at step {t}")));
        }
        Ok(EntropyFeatureVector {
            t,
            features: f,
            recipe_version: RECIPE_VERSION.to_string(),
        })
    }

    /// Rows at `earliest_step(), earliest_step() + stride, …`.
    pub fn extract(&mut self, stride: usize) -> Result<Vec<EntropyFeatureVector>> {
        let stride = stride.max(1);
        (self.earliest_step()..self.grid.n_steps())
            .step_by(stride)
            .map(|t| self.vector_at(t))
            .collect()
    }

    fn multiscale_cells(&self, t: usize) -> Vec<Vec<f64>> {
        let lo = t + 1 - self.recipe.history;
        let max_nats = 6f64.ln() + 120f64.ln();
        MULTISCALE_FACTORS
            .iter()
            .zip(&self.multiscale)
            .map(|(&s, cells)| {
                let b_lo = lo.div_ceil(s);
                let b_end = (t + 1) / s; // exclusive
                cells
                    .iter()
                    .map(|(tcodes, scodes)| {
                        if b_end <= b_lo {
                            return 0.0;
                        }
                        let mut tcount = [0u64; 6];
                        let mut scount = [0u64; 120];
                        let mut tn = 0;
                        for b in b_lo..b_end {
                            scount[scodes[b] as usize] += 1;
                            if b + 2 < b_end {
                                tcount[tcodes[b] as usize] += 1;
                                tn += 1;
                            }
                        }
                        let h = entropy_from_counts(tcount, tn)
                            + entropy_from_counts(scount, (b_end - b_lo) as u64);
                        (h / max_nats).clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect()
    }

    fn synchrony(&self, t: usize) -> Vec<f64> {
        // pattern codes indexed by start step; last start inside history is t − 2
        let lo = t + 1 - self.recipe.history;
        let hi = t - 2;
        SYNC_LAGS
            .iter()
            .map(|&lag| {
                let start = lo + lag;
                if start > hi {
                    return 0.0;
                }
                let mut matches = 0usize;
                for &(a, b) in &self.sync_pairs {
                    let (ca, cb) = (&self.sync_codes[a], &self.sync_codes[b]);
                    matches += (start..=hi).filter(|&s| ca[s] == cb[s - lag]).count();
                }
                matches as f64 / (self.sync_pairs.len() * (hi - start + 1)) as f64
            })
            .collect()
    }

    fn persistence(&self, track: &TemporalTrack, t: usize) -> f64 {
        let lo = t + 1 - self.recipe.history;
        let last = t - track.span;
        let mut total = 0.0;
        for (codes, win) in track.codes.iter().zip(&track.windows) {
            let window = &codes[lo..=last];
            let mut dominant = window[0];
            let mut best = 0;
            for &c in window {
                let n = win.count(c);
                if n > best || (n == best && c < dominant) {
                    best = n;
                    dominant = c;
                }
            }
            let (mut runs, mut run_len_sum, mut in_run) = (0usize, 0usize, false);
            for &c in window {
                if c == dominant {
                    run_len_sum += 1;
                    if !in_run {
                        runs += 1;
                        in_run = true;
                    }
                } else {
                    in_run = false;
                }
            }
            total += run_len_sum as f64 / runs.max(1) as f64;
        }
        total / track.codes.len() as f64
    }

    #[doc(hidden)]
    pub fn interior_cells(&self) -> usize {
        self.interior.len()
    }
}

/// Feature vector at step `t`, computed from the grid history up to `t`.
pub fn feature_vector(g: &GridSeries, t: usize, recipe: &FeatureRecipe) -> Result<EntropyFeatureVector> {
    if t >= g.n_steps() {
        return Err(Error::Range(format!("step {t} beyond series of {} steps", g.n_steps())));
    }
    recipe.validate()?;
    let t_min = recipe.earliest_step();
    if t < t_min {
        return Err(Error::insufficient(
            format!("feature vector at step {t} (earliest valid step {t_min})"),
            t_min,
            t,
        ));
    }
    let head = g.slice_time(0, t + 1)?;
    let mut ex = FeatureExtractor::new(&head, recipe)?;
    ex.vector_at(t)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va <= 1e-18 || vb <= 1e-18 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENTROPY_COLUMNS: [std::ops::Range<usize>; 3] = [0..40, 55..58, 64..70];
    const GRADIENT_COLUMNS: [std::ops::Range<usize>; 2] = [46..51, 62..64];

    #[test]
    fn names_match_count() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), FEATURE_COUNT);
    }

    #[test]
    fn constant_grid_zero_entropy_features() {
        let g = GridSeries::from_fn(6, 6, 200, |_, _, _| 3.0).unwrap();
        let recipe = FeatureRecipe::default();
        let mut ex = FeatureExtractor::new(&g, &recipe).unwrap();
        let rows = ex.extract(7).unwrap();
        assert!(!rows.is_empty());
        for row in &rows {
            assert_eq!(row.features.len(), FEATURE_COUNT);
            for range in ENTROPY_COLUMNS.iter().chain(GRADIENT_COLUMNS.iter()) {
                for k in range.clone() {
                    assert_eq!(row.features[k], 0.0, "feature {k}");
                }
            }
        }
    }

    #[test]
    fn insufficient_history_names_earliest_step() {
        let g = GridSeries::from_fn(6, 6, 200, |t, _, _| t as f64).unwrap();
        let recipe = FeatureRecipe::default();
        let err = feature_vector(&g, 50, &recipe).unwrap_err();
        assert!(err.to_string().contains(&recipe.earliest_step().to_string()));
    }
}
