//! Spatial gradients and temporal rates of an entropy field.

use super::field::EntropyField;
use crate::error::{Error, Result};

/// A per-cell grid with absent entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid<T> {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Option<T>>,
}

impl<T: Copy> CellGrid<T> {
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.cells[i * self.height + j]
    }

    pub fn present(&self) -> impl Iterator<Item = T> + '_ {
        self.cells.iter().filter_map(|c| *c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub gx: f64,
    pub gy: f64,
    pub magnitude: f64,
}

/// Cell-unit gradient of the field at `t`: central differences inside the
/// valid region, one-sided at its edges, zero along an axis with a single
/// valid cell.
pub fn entropy_gradient(field: &EntropyField, t: usize) -> Result<CellGrid<Gradient>> {
    if t < field.valid_from() || t >= field.n_steps() {
        return Err(Error::Range(format!(
            "gradient at step {t} outside valid range {}..{}",
            field.valid_from(),
            field.n_steps()
        )));
    }
    let (w, h) = (field.width(), field.height());
    let at = |i: isize, j: isize| -> Option<f64> {
        if i < 0 || j < 0 {
            None
        } else {
            field.get(t, i as usize, j as usize)
        }
    };
    let diff = |minus: Option<f64>, center: f64, plus: Option<f64>| -> f64 {
        match (minus, plus) {
            (Some(m), Some(p)) => (p - m) / 2.0,
            (None, Some(p)) => p - center,
            (Some(m), None) => center - m,
            (None, None) => 0.0,
        }
    };
    let mut cells = Vec::with_capacity(w * h);
    for i in 0..w as isize {
        for j in 0..h as isize {
            cells.push(at(i, j).map(|c| {
                let gx = diff(at(i - 1, j), c, at(i + 1, j));
                let gy = diff(at(i, j - 1), c, at(i, j + 1));
                Gradient {
                    gx,
                    gy,
                    magnitude: gx.hypot(gy),
                }
            }));
        }
    }
    Ok(CellGrid {
        width: w,
        height: h,
        cells,
    })
}

/// Least-squares slope of `H` over steps `t − window_w ..= t`, per cell, in
/// entropy units per step.
pub fn entropy_rate(field: &EntropyField, t: usize, window_w: usize) -> Result<CellGrid<f64>> {
    if window_w == 0 {
        return Err(Error::invalid("rate window must be >= 1"));
    }
    if t >= field.n_steps() || t < window_w || t - window_w < field.valid_from() {
        return Err(Error::Range(format!(
            "rate at step {t} with window {window_w} needs steps from {}",
            field.valid_from()
        )));
    }
    let (w, h) = (field.width(), field.height());
    let n = (window_w + 1) as f64;
    // centred abscissae keep the fit well conditioned
    let x_mean = window_w as f64 / 2.0;
    let sxx: f64 = (0..=window_w).map(|k| (k as f64 - x_mean).powi(2)).sum();
    let frames: Vec<&[f64]> = (t - window_w..=t)
        .map(|s| field.frame(s).expect("frame inside valid range"))
        .collect();
    let cells = (0..w * h)
        .map(|c| {
            field.cell_mask()[c].then(|| {
                let y_mean = frames.iter().map(|f| f[c]).sum::<f64>() / n;
                let sxy: f64 = frames
                    .iter()
                    .enumerate()
                    .map(|(k, f)| (k as f64 - x_mean) * (f[c] - y_mean))
                    .sum();
                sxy / sxx
            })
        })
        .collect();
    Ok(CellGrid {
        width: w,
        height: h,
        cells,
    })
}
