//! Experiment orchestration: configuration, the resumable pipeline, the
//! verification suites, and static SVG plot emission.

pub mod config;
pub mod pipeline;
pub mod svg;
pub mod verify;

pub use config::{
    AffinityMetric, ExperimentConfig, FamilyConfig, InitCenter, InitConfig, ProbeSettings,
    SgdSettings, SpectralSettings, VerifySettings,
};
pub use pipeline::{init_point, ComparisonReport, Pipeline, PipelineStage};
pub use verify::{run_verify, VerifyReport};
