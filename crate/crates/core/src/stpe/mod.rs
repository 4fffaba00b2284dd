//! Spatiotemporal permutation entropy (STPE).
//!
//! Ordinal patterns are taken over embedding vectors that concatenate `d`
//! delayed samples of a cell with its four von-Neumann neighbours at radius
//! `δ` at the current step, giving patterns of length `L = d + 4`. The
//! factored mode instead sums a temporal entropy (length `d`) and a spatial
//! entropy over the five-point cross (length 5), which keeps the alphabet
//! small enough for short windows on small grids.

mod derivative;
mod entropy;
mod features;
mod field;
mod multiscale;
mod ordinal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use derivative::{entropy_gradient, entropy_rate, CellGrid, Gradient};
pub use entropy::{
    embedding_span, ordinal_codes, temporal_pe, temporal_pe_with, CountLogTable, LogBase,
    SlidingEntropy,
};
pub use features::{
    feature_names, feature_vector, EntropyFeatureVector, FeatureExtractor, FeatureRecipe,
    FEATURE_COUNT, RECIPE_VERSION,
};
pub use field::{st_embedding, stpe_field, EntropyField};
pub use multiscale::multiscale_stpe;
pub use ordinal::{
    entropy_from_counts, factorial, ordinal_pattern, pattern_code, OrdinalPattern,
    PatternDistribution, TieRule, MAX_PATTERN_LEN,
};

/// Spatial radii (meters) used by the spatial-correlation features.
pub const SPATIAL_RADII_M: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
/// Coarse-graining factors for multiscale entropy.
pub const MULTISCALE_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];

/// How the spatiotemporal alphabet is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Joint when the window holds at least `5·L!` samples, otherwise factored.
    #[default]
    Auto,
    Joint,
    Factored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StpeConfig {
    /// Embedding dimension (number of temporal lags).
    pub d: usize,
    /// Delay between lags, in steps.
    pub tau: usize,
    /// Neighbour offset δ in cells.
    pub spatial_radius_cells: usize,
    pub scales: Vec<usize>,
    pub log_base: LogBase,
    /// Divide by the maximal entropy of the alphabet.
    pub normalize: bool,
    pub mode: EntropyMode,
    /// Undersampled windows are an error instead of a quality flag.
    pub strict: bool,
    pub tie_rule: TieRule,
    /// Trailing window (steps) used by multiscale analysis.
    pub window: usize,
}

impl Default for StpeConfig {
    fn default() -> Self {
        Self {
            d: 3,
            tau: 1,
            spatial_radius_cells: 1,
            scales: MULTISCALE_FACTORS.to_vec(),
            log_base: LogBase::E,
            normalize: true,
            mode: EntropyMode::Auto,
            strict: false,
            tie_rule: TieRule::EarlierLower,
            window: 64,
        }
    }
}

impl StpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(3..=7).contains(&self.d) {
            return Err(Error::validation(format!("d = {} outside 3..=7", self.d)));
        }
        if self.tau == 0 {
            return Err(Error::validation("tau must be >= 1"));
        }
        if self.spatial_radius_cells == 0 {
            return Err(Error::validation("spatial radius must be >= 1 cell"));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::validation("scales must be non-empty and >= 1"));
        }
        if self.window == 0 {
            return Err(Error::validation("window must be >= 1"));
        }
        Ok(())
    }

    /// Joint embedding length `d + 4`.
    pub fn embedding_len(&self) -> usize {
        self.d + 4
    }

    /// First step at which a full embedding exists.
    pub fn first_embedding_step(&self) -> usize {
        (self.d - 1) * self.tau
    }

    /// Mode actually used for a window of `window` samples.
    pub fn resolve_mode(&self, window: usize) -> EntropyMode {
        match self.mode {
            EntropyMode::Auto => {
                if (window as u64) >= 5 * factorial(self.embedding_len()) {
                    EntropyMode::Joint
                } else {
                    EntropyMode::Factored
                }
            }
            m => m,
        }
    }
}

/// Converts a radius in meters to whole cells (at least one).
pub fn radius_cells(radius_m: f64, cell_spacing: f64) -> usize {
    ((radius_m / cell_spacing).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_bounds() {
        assert!(StpeConfig::default().validate().is_ok());
        let bad = StpeConfig { d: 8, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = StpeConfig { tau: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn auto_mode_switches_on_sample_guard() {
        let cfg = StpeConfig::default();
        assert_eq!(cfg.resolve_mode(64), EntropyMode::Factored);
        assert_eq!(cfg.resolve_mode(25_200), EntropyMode::Joint);
    }

    #[test]
    fn radii_round_to_cells() {
        let cells: Vec<usize> = SPATIAL_RADII_M.iter().map(|&r| radius_cells(r, 1.0)).collect();
        assert_eq!(cells, vec![1, 1, 2, 5, 10]);
        assert_eq!(radius_cells(10.0, 4.0), 3);
    }
}
