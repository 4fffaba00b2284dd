//! End-to-end training and prediction over a labelled segment dataset.

mod config;
mod run;
#[cfg(test)]
mod tests;

pub use config::{derive_seed, CapacitySection, DataSection, RunConfig, SnnSection, Stage1Section, Stage2Section};
pub use run::{
    clean_normal_end, evaluate_outputs, extract_features, forecast_segment, part_indices, predict_all,
    predict_segment, resume_stage1, run_snn, run_stage1, run_stage2, surprise_channels, Models, RiskRow, SegmentFeatures,
    SegmentOutput, SnnArtifacts, Stage1Artifacts, Stage2Artifacts, Standardizer,
};
