use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use super::entropy::scale_entropy;
use super::ordinal::{factorial, pattern_code};
use super::{EntropyMode, StpeConfig};
use crate::error::{Error, Result};
use crate::grid::GridSeries;

/// Per-cell, per-step entropy `H(i, j, t)` over a trailing window.
///
/// Steps before `valid_from` and cells without a full neighbourhood are
/// absent; [`EntropyField::get`] returns `None` for them.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    width: usize,
    height: usize,
    n_steps: usize,
    valid_from: usize,
    cell_valid: Vec<bool>,
    /// Frames for steps `valid_from..n_steps`; absent cells hold NaN.
    values: Vec<f64>,
    /// Upper bound of any stored value in the configured base.
    pub max_entropy: f64,
    pub mode: EntropyMode,
    /// Window held fewer than five samples per alphabet symbol.
    pub undersampled: bool,
}

impl EntropyField {
    /// Builds a field directly from a value function; used for synthetic
    /// derivative inputs and CSV import.
    pub fn from_fn(
        width: usize,
        height: usize,
        n_steps: usize,
        valid_from: usize,
        cell_valid: impl Fn(usize, usize) -> bool,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        if valid_from >= n_steps {
            return Err(Error::Range(format!("valid_from {valid_from} >= n_steps {n_steps}")));
        }
        let mask: Vec<bool> = (0..width * height)
            .map(|c| cell_valid(c / height, c % height))
            .collect();
        let mut values = Vec::with_capacity((n_steps - valid_from) * width * height);
        for t in valid_from..n_steps {
            for c in 0..width * height {
                values.push(if mask[c] { f(t, c / height, c % height) } else { f64::NAN });
            }
        }
        if values.iter().zip(mask.iter().cycle()).any(|(v, &m)| m && !v.is_finite()) {
            return Err(Error::invalid("entropy field values must be finite"));
        }
        Ok(Self {
            width,
            height,
            n_steps,
            valid_from,
            cell_valid: mask,
            values,
            max_entropy: f64::INFINITY,
            mode: EntropyMode::Factored,
            undersampled: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn valid_from(&self) -> usize {
        self.valid_from
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn is_cell_valid(&self, i: usize, j: usize) -> bool {
        self.cell_valid[i * self.height + j]
    }

    pub fn cell_mask(&self) -> &[bool] {
        &self.cell_valid
    }

    pub fn n_valid_cells(&self) -> usize {
        self.cell_valid.iter().filter(|&&v| v).count()
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        if t < self.valid_from || t >= self.n_steps || i >= self.width || j >= self.height {
            return None;
        }
        let c = i * self.height + j;
        self.cell_valid[c].then(|| self.values[(t - self.valid_from) * self.n_cells() + c])
    }

    /// Raw frame at `t`, indexed `[i * height + j]`; check the mask before use.
    pub fn frame(&self, t: usize) -> Option<&[f64]> {
        if t < self.valid_from || t >= self.n_steps {
            return None;
        }
        let n = self.n_cells();
        let start = (t - self.valid_from) * n;
        Some(&self.values[start..start + n])
    }

    /// Valid values of the frame at `t`, in cell order.
    pub fn valid_values(&self, t: usize) -> Vec<f64> {
        match self.frame(t) {
            Some(frame) => frame
                .iter()
                .zip(&self.cell_valid)
                .filter_map(|(&v, &m)| m.then_some(v))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Mean over valid cells at step `t`.
    pub fn frame_mean(&self, t: usize) -> Option<f64> {
        let vals = self.valid_values(t);
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Grid-mean entropy for every valid step.
    pub fn mean_trace(&self) -> Vec<f64> {
        (self.valid_from..self.n_steps)
            .filter_map(|t| self.frame_mean(t))
            .collect()
    }

    /// Mean over all valid cells and steps.
    pub fn mean(&self) -> f64 {
        let trace = self.mean_trace();
        trace.iter().sum::<f64>() / trace.len().max(1) as f64
    }

    /// Every valid `(cell, step)` value, step-major.
    pub fn all_valid_values(&self) -> Vec<f64> {
        (self.valid_from..self.n_steps)
            .flat_map(|t| self.valid_values(t))
            .collect()
    }

    /// Restricts the field to steps `[self.valid_from.max(start), end)`.
    pub fn crop_time(&self, start: usize, end: usize) -> Result<Self> {
        let lo = start.max(self.valid_from);
        let hi = end.min(self.n_steps);
        if lo >= hi {
            return Err(Error::Range(format!(
                "crop {start}..{end} leaves no valid steps (valid {}..{})",
                self.valid_from, self.n_steps
            )));
        }
        let n = self.n_cells();
        let values = self.values[(lo - self.valid_from) * n..(hi - self.valid_from) * n].to_vec();
        Ok(Self {
            n_steps: hi,
            valid_from: lo,
            values,
            cell_valid: self.cell_valid.clone(),
            ..*self
        })
    }

    /// Writes `t,i,j,entropy` rows for valid entries only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,i,j,entropy")?;
        for t in self.valid_from..self.n_steps {
            for i in 0..self.width {
                for j in 0..self.height {
                    if let Some(h) = self.get(t, i, j) {
                        writeln!(w, "{t},{i},{j},{h}")?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`EntropyField::write_csv`]. Grid extents are
    /// taken from the largest indices present.
    pub fn read_csv<R: BufRead>(r: R, width: usize, height: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty field CSV".into()))??;
        if header.trim() != "t,i,j,entropy" {
            return Err(Error::Parse(format!("unexpected field CSV header `{header}`")));
        }
        let mut entries = BTreeMap::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Parse(format!("bad field row `{line}`")));
            }
            let parse_idx = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
            let key = (parse_idx(parts[0])?, parse_idx(parts[1])?, parse_idx(parts[2])?);
            let v: f64 = parts[3].trim().parse().map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
            if entries.insert(key, v).is_some() {
                return Err(Error::Parse(format!("duplicate field entry {key:?}")));
            }
        }
        let valid_from = entries.keys().map(|k| k.0).min().ok_or_else(|| Error::Parse("no rows".into()))?;
        let n_steps = entries.keys().map(|k| k.0).max().unwrap_or(0) + 1;
        let mask: Vec<bool> = (0..width * height)
            .map(|c| entries.contains_key(&(valid_from, c / height, c % height)))
            .collect();
        Self::from_fn(
            width,
            height,
            n_steps,
            valid_from,
            |i, j| mask[i * height + j],
            |t, i, j| entries.get(&(t, i, j)).copied().unwrap_or(f64::NAN),
        )
    }
}

/// The spatiotemporal embedding of cell `(i, j)` at step `t`:
/// `[X(t), X(t−τ), …, X(t−(d−1)τ), X(i+δ,j), X(i−δ,j), X(i,j+δ), X(i,j−δ)]`.
pub fn st_embedding(g: &GridSeries, i: usize, j: usize, t: usize, cfg: &StpeConfig) -> Result<Vec<f64>> {
    let mut out = vec![0.0; cfg.embedding_len()];
    st_embedding_into(g, i, j, t, cfg, &mut out)?;
    Ok(out)
}

fn st_embedding_into(
    g: &GridSeries,
    i: usize,
    j: usize,
    t: usize,
    cfg: &StpeConfig,
    out: &mut [f64],
) -> Result<()> {
    let r = cfg.spatial_radius_cells;
    if t < cfg.first_embedding_step() || t >= g.n_steps() {
        return Err(Error::Boundary(format!(
            "step {t} outside embeddable range {}..{}",
            cfg.first_embedding_step(),
            g.n_steps()
        )));
    }
    if i < r || j < r || i + r >= g.width() || j + r >= g.height() {
        return Err(Error::Boundary(format!(
            "cell ({i},{j}) lacks neighbours at radius {r} in a {}x{} grid",
            g.width(),
            g.height()
        )));
    }
    for k in 0..cfg.d {
        out[k] = g.get(t - k * cfg.tau, i, j);
    }
    let d = cfg.d;
    out[d] = g.get(t, i + r, j);
    out[d + 1] = g.get(t, i - r, j);
    out[d + 2] = g.get(t, i, j + r);
    out[d + 3] = g.get(t, i, j - r);
    Ok(())
}

/// Five-point spatial cross `[center, (i+r,j), (i−r,j), (i,j+r), (i,j−r)]` at `t`.
#[inline]
pub(crate) fn spatial_cross(g: &GridSeries, i: usize, j: usize, t: usize, r: usize) -> [f64; 5] {
    [
        g.get(t, i, j),
        g.get(t, i + r, j),
        g.get(t, i - r, j),
        g.get(t, i, j + r),
        g.get(t, i, j - r),
    ]
}

/// Sliding pattern histogram with exact entropy recomputation.
#[derive(Default)]
struct WindowCounts {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl WindowCounts {
    fn add(&mut self, code: u64) {
        *self.counts.entry(code).or_insert(0) += 1;
        self.total += 1;
    }

    fn remove(&mut self, code: u64) {
        if let Some(c) = self.counts.get_mut(&code) {
            *c -= 1;
            if *c == 0 {
                self.counts.remove(&code);
            }
            self.total -= 1;
        }
    }

    fn entropy_nats(&self) -> f64 {
        super::ordinal::entropy_from_counts(self.counts.values().copied(), self.total)
    }
}

/// Computes `H_STPE(i, j, t)` for every interior cell from the patterns of
/// the trailing `window` steps.
pub fn stpe_field(g: &GridSeries, cfg: &StpeConfig, window: usize) -> Result<EntropyField> {
    cfg.validate()?;
    if window == 0 {
        return Err(Error::invalid("entropy window must be >= 1"));
    }
    let first = cfg.first_embedding_step();
    let valid_from = first + window - 1;
    if g.n_steps() <= valid_from {
        return Err(Error::insufficient("entropy field", valid_from + 1, g.n_steps()));
    }
    let r = cfg.spatial_radius_cells;
    if g.width() < 2 * r + 1 || g.height() < 2 * r + 1 {
        return Err(Error::Boundary(format!(
            "{}x{} grid has no interior cells at radius {r}",
            g.width(),
            g.height()
        )));
    }

    let mode = cfg.resolve_mode(window);
    let len = cfg.embedding_len();
    let (alphabet, max_nats) = match mode {
        EntropyMode::Joint => (factorial(len), (factorial(len) as f64).ln()),
        _ => (
            factorial(cfg.d).max(120),
            (factorial(cfg.d) as f64).ln() + 120f64.ln(),
        ),
    };
    let required = 5 * alphabet;
    let undersampled = (window as u64) < required;
    if undersampled && cfg.strict {
        return Err(Error::Undersampled {
            samples: window,
            required: required as usize,
        });
    }

    let (w, h, n) = (g.width(), g.height(), g.n_steps());
    let cells: Vec<(usize, usize)> = (r..w - r)
        .flat_map(|i| (r..h - r).map(move |j| (i, j)))
        .collect();

    let per_cell: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(i, j)| cell_entropies(g, cfg, mode, window, i, j, max_nats))
        .collect();

    let n_cells = w * h;
    let n_rows = n - valid_from;
    let mut values = vec![f64::NAN; n_rows * n_cells];
    let mut cell_valid = vec![false; n_cells];
    for (&(i, j), series) in cells.iter().zip(&per_cell) {
        let c = i * h + j;
        cell_valid[c] = true;
        for (row, &v) in series.iter().enumerate() {
            values[row * n_cells + c] = v;
        }
    }

    let max_entropy = scale_entropy(max_nats, max_nats, cfg.log_base, cfg.normalize);
    Ok(EntropyField {
        width: w,
        height: h,
        n_steps: n,
        valid_from,
        cell_valid,
        values,
        max_entropy,
        mode,
        undersampled,
    })
}

fn cell_entropies(
    g: &GridSeries,
    cfg: &StpeConfig,
    mode: EntropyMode,
    window: usize,
    i: usize,
    j: usize,
    max_nats: f64,
) -> Vec<f64> {
    let first = cfg.first_embedding_step();
    let n = g.n_steps();
    let r = cfg.spatial_radius_cells;
    let mut out = Vec::with_capacity(n - (first + window - 1));

    match mode {
        EntropyMode::Joint => {
            let mut buf = vec![0.0; cfg.embedding_len()];
            let codes: Vec<u64> = (first..n)
                .map(|t| {
                    st_embedding_into(g, i, j, t, cfg, &mut buf).expect("interior cell");
                    pattern_code(&buf, cfg.tie_rule)
                })
                .collect();
            let mut counts = WindowCounts::default();
            for (k, &code) in codes.iter().enumerate() {
                counts.add(code);
                if k >= window {
                    counts.remove(codes[k - window]);
                }
                if k + 1 >= window {
                    let h = counts.entropy_nats();
                    out.push(scale_entropy(h, max_nats, cfg.log_base, cfg.normalize));
                }
            }
        }
        _ => {
            let mut tbuf = vec![0.0; cfg.d];
            let codes: Vec<(u64, u64)> = (first..n)
                .map(|t| {
                    for (k, v) in tbuf.iter_mut().enumerate() {
                        *v = g.get(t - k * cfg.tau, i, j);
                    }
                    let spatial = spatial_cross(g, i, j, t, r);
                    (pattern_code(&tbuf, cfg.tie_rule), pattern_code(&spatial, cfg.tie_rule))
                })
                .collect();
            let mut temporal = WindowCounts::default();
            let mut spatial = WindowCounts::default();
            for (k, &(ct, cs)) in codes.iter().enumerate() {
                temporal.add(ct);
                spatial.add(cs);
                if k >= window {
                    let (ot, os) = codes[k - window];
                    temporal.remove(ot);
                    spatial.remove(os);
                }
                if k + 1 >= window {
                    let h = temporal.entropy_nats() + spatial.entropy_nats();
                    out.push(scale_entropy(h, max_nats, cfg.log_base, cfg.normalize));
                }
            }
        }
    }
    out
}
