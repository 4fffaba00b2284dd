use std::collections::BTreeMap;

use super::field::stpe_field;
use super::StpeConfig;
use crate::error::{Error, Result};
use crate::grid::GridSeries;

/// Grid-time mean STPE of the coarse-grained grid at every configured scale.
///
/// Coarse-graining uses non-overlapping block means of `s` steps; each scale
/// then uses `cfg.window` coarse steps as its trailing window.
pub fn multiscale_stpe(g: &GridSeries, cfg: &StpeConfig) -> Result<BTreeMap<usize, f64>> {
    cfg.validate()?;
    let min_steps = cfg.first_embedding_step() + cfg.window;
    let mut out = BTreeMap::new();
    for &s in &cfg.scales {
        let needed = s * min_steps;
        if g.n_steps() < needed {
            return Err(Error::insufficient(format!("multiscale STPE at scale {s}"), needed, g.n_steps()));
        }
        let coarse = g.coarse_grain(s)?;
        let field = stpe_field(&coarse, cfg, cfg.window)?;
        out.insert(s, field.mean());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_scale_equals_field_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GridSeries::from_fn(5, 5, 200, |_, _, _| rng.random()).unwrap();
        let cfg = StpeConfig { scales: vec![1], window: 50, ..Default::default() };
        let ms = multiscale_stpe(&g, &cfg).unwrap();
        let direct = stpe_field(&g, &cfg, 50).unwrap().mean();
        assert_eq!(ms[&1], direct);
    }

    #[test]
    fn white_noise_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSeries::from_fn(5, 5, 16 * 420, |_, _, _| rng.random()).unwrap();
        let cfg = StpeConfig { window: 400, ..Default::default() };
        let ms = multiscale_stpe(&g, &cfg).unwrap();
        let base = ms[&1];
        for (&s, &h) in &ms {
            assert!((h - base).abs() / base < 0.05, "scale {s}: {h} vs {base}");
        }
    }

    #[test]
    fn scale_beyond_series_is_insufficient() {
        let g = GridSeries::from_fn(5, 5, 100, |t, _, _| t as f64).unwrap();
        let cfg = StpeConfig { scales: vec![16], window: 20, ..Default::default() };
        assert!(matches!(multiscale_stpe(&g, &cfg), Err(Error::InsufficientData { .. })));
    }
}
