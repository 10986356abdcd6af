//! Synthetic instances, the brute-force oracle, quality measures, and the
//! experiment runners built on them.

pub mod geometry;
pub mod oracle;
pub mod report;
pub mod runners;
pub mod synth;
pub mod texture;

pub use geometry::{center_error_pct, overlap_error, Parallelogram};
pub use oracle::brute_force_match;
pub use report::{ExperimentReport, ReportRow};
pub use runners::{
    linear_fit, run_guarantee_validation, run_occlusion_sweep, run_scalability, LinearFit, OcclusionConfig,
    ScalabilityConfig, ValidationConfig,
};
pub use synth::{add_block_occlusion, derive_seed, gen_planted_affine, gen_planted_translation, SyntheticInstance};
pub use texture::{synth_texture, TextureParams};
