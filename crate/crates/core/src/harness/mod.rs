//! Experiment runners on synthetic orchards: accuracy with and without the
//! cutoff box, cross-row templates, unit-tree gaps, row ends, curved rows,
//! voxel and template-size sweeps, baseline comparison and a closed-loop
//! line-following simulation.
//!
//! Seeds are derived from the master seed by label, so every cell of a sweep
//! is reproducible on its own. Frame `i` of the evaluation trajectory always
//! uses the same render, preprocessing and sampling seeds, which makes the
//! identity degradations reproduce the plain accuracy run exactly.

pub mod config;
pub mod metrics;
mod output;
mod runners;

pub use config::{ClosedLoopConfig, CompareConfig, ControllerGains, ExperimentConfig, Method, SweepConfig, KNOWN_KEYS};
pub use metrics::{accumulated_error_distribution, compute_metrics, percentile_sorted, spearman, thresholds, ErrorMetrics};
pub use output::{derived_seeds, Report, RunOutput, FRAME_CSV_HEADER};
pub use runners::*;
