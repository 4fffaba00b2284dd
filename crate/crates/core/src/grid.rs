//! Dense time-indexed sensor grids and their CSV form (`t,i,j,value`).

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// A `width × height` grid of scalar sensors sampled over `n_steps` steps.
///
/// Values are stored row-major in `(t, i, j)` order, `i` running along the
/// width and `j` along the height.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    width: usize,
    height: usize,
    n_steps: usize,
    /// Seconds per step.
    pub dt: f64,
    /// Meters per cell.
    pub cell_spacing: f64,
    values: Vec<f64>,
}

impl GridSeries {
    pub fn new(width: usize, height: usize, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || n_steps == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        let expected = width * height * n_steps;
        if values.len() != expected {
            return Err(Error::shape("GridSeries values", expected, values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite grid value at flat index {pos}")));
        }
        Ok(Self {
            width,
            height,
            n_steps,
            dt: 1.0,
            cell_spacing: 1.0,
            values,
        })
    }

    /// Builds a grid by evaluating `f(t, i, j)` at every point.
    pub fn from_fn(
        width: usize,
        height: usize,
        n_steps: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height * n_steps);
        for t in 0..n_steps {
            for i in 0..width {
                for j in 0..height {
                    values.push(f(t, i, j));
                }
            }
        }
        Self::new(width, height, n_steps, values)
    }

    pub fn with_spacing(mut self, dt: f64, cell_spacing: f64) -> Self {
        self.dt = dt;
        self.cell_spacing = cell_spacing;
        self
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

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.width + i) * self.height + j
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(t, i, j)]
    }

    /// The full time series of one cell.
    pub fn cell_series(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.n_steps).map(|t| self.get(t, i, j)).collect()
    }

    /// The spatial snapshot at step `t`, indexed `[i * height + j]`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let start = t * self.n_cells();
        &self.values[start..start + self.n_cells()]
    }

    /// Steps `[start, end)` as a new grid.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_steps {
            return Err(Error::Range(format!(
                "time slice {start}..{end} outside 0..{}",
                self.n_steps
            )));
        }
        let cells = self.n_cells();
        let values = self.values[start * cells..end * cells].to_vec();
        Ok(Self {
            n_steps: end - start,
            values,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            n_steps: self.n_steps,
            dt: self.dt,
            cell_spacing: self.cell_spacing,
            values: Vec::new(),
        }
    }

    /// Non-overlapping temporal block means with factor `scale`; a trailing
    /// partial block is dropped.
    pub fn coarse_grain(&self, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::invalid("coarse-graining scale must be >= 1"));
        }
        if scale == 1 {
            return Ok(self.clone());
        }
        let n_out = self.n_steps / scale;
        if n_out == 0 {
            return Err(Error::insufficient("coarse-graining", scale, self.n_steps));
        }
        let cells = self.n_cells();
        let mut values = vec![0.0; n_out * cells];
        for b in 0..n_out {
            let out = &mut values[b * cells..(b + 1) * cells];
            for k in 0..scale {
                let frame = self.frame(b * scale + k);
                for (o, v) in out.iter_mut().zip(frame) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= scale as f64;
            }
        }
        Ok(Self {
            n_steps: n_out,
            values,
            dt: self.dt * scale as f64,
            ..self.clone_header()
        })
    }

    /// Writes the `t,i,j,value` CSV form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,i,j,value")?;
        for t in 0..self.n_steps {
            for i in 0..self.width {
                for j in 0..self.height {
                    writeln!(w, "{t},{i},{j},{}", self.get(t, i, j))?;
                }
            }
        }
        Ok(())
    }

    /// Parses the `t,i,j,value` CSV form. Row order is free; duplicate
    /// `(t,i,j)` keys and gaps are rejected.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid CSV".into()))??;
        if header.trim() != "t,i,j,value" {
            return Err(Error::Parse(format!("unexpected grid CSV header `{header}`")));
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        let (mut max_t, mut max_i, mut max_j) = (0usize, 0usize, 0usize);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next_idx = |name: &str| -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing {name}", lineno + 2)))?
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: bad {name}: {e}", lineno + 2)))
            };
            let t = next_idx("t")?;
            let i = next_idx("i")?;
            let j = next_idx("j")?;
            let value: f64 = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing value", lineno + 2)))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad value: {e}", lineno + 2)))?;
            if !seen.insert((t, i, j)) {
                return Err(Error::Parse(format!("duplicate grid entry ({t},{i},{j})")));
            }
            max_t = max_t.max(t);
            max_i = max_i.max(i);
            max_j = max_j.max(j);
            rows.push((t, i, j, value));
        }
        if rows.is_empty() {
            return Err(Error::Parse("grid CSV has no rows".into()));
        }
        let (n_steps, width, height) = (max_t + 1, max_i + 1, max_j + 1);
        if rows.len() != n_steps * width * height {
            return Err(Error::Parse(format!(
                "grid CSV is not dense: {} rows for {n_steps}x{width}x{height}",
                rows.len()
            )));
        }
        let mut values = vec![0.0; rows.len()];
        for (t, i, j, v) in rows {
            values[(t * width + i) * height + j] = v;
        }
        Self::new(width, height, n_steps, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_shuffled_rows() {
        let g = GridSeries::from_fn(3, 4, 5, |t, i, j| t as f64 * 0.1 + i as f64 - j as f64 / 3.0)
            .unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let back = GridSeries::read_csv(shuffled.as_bytes()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let csv = "t,i,j,value\n0,0,0,1\n0,0,0,2\n";
        assert!(matches!(GridSeries::read_csv(csv.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(GridSeries::new(1, 1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn coarse_grain_means_blocks() {
        let g = GridSeries::from_fn(1, 1, 7, |t, _, _| t as f64).unwrap();
        let c = g.coarse_grain(3).unwrap();
        assert_eq!(c.values(), &[1.0, 4.0]);
    }
}
