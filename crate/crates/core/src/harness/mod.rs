//! Dataset loading, experiment configuration, orchestration and table
//! output.

pub mod config;
pub mod datasets;
pub mod pipeline;
pub mod table;

pub use config::{ConfigFile, EstimatorConfig, ExperimentConfig, ModelConfig, Preset, PresetKind, Reorder, SamplerConfig, Variant};
pub use datasets::{load_bundled, load_dataset, Dataset, Schema};
pub use pipeline::{diagnose_variance, estimate_from_chain, run_experiment, VarianceRow};
pub use table::{emit_table, emit_variance_table, parse_table_csv, TableFormat};
