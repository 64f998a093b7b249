//! Three-step training pipeline and checkpoint persistence.

pub mod checkpoint;
mod config;
mod pipeline;

pub use checkpoint::{config_hash, Checkpoint, NamedArray};
pub use config::{DataConfig, DataSpec, GanConfig, Mode, PipelineConfig, StepConfig};
pub use pipeline::{run_pipeline, run_step1, run_step2, run_step3, Datasets, PipelineReport, ReportRow, RunDir};
