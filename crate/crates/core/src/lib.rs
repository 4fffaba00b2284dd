//! Entropy-driven prognostics for gridded sensor fields.

pub mod error;
pub mod grid;
pub mod stpe;
pub mod synth;
pub mod nn;
pub mod beqrnn;
pub mod attention;
pub mod snn;
pub mod prognostics;
pub mod pipeline;

pub use error::{Error, Result};
pub use grid::GridSeries;
