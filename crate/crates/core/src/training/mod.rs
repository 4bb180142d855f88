//! Wake-sleep training: configuration, data sources, Adam, the update loop,
//! metrics and evaluation.

pub mod config;
pub mod data;
mod diagnose;
pub mod metrics;
pub mod optim;
mod trainer;

pub use config::{BaselineKind, DataKind, ExperimentConfig};
pub use data::{model_shape, ExampleSource, ExperimentData, ImageSource, ToySource};
pub use diagnose::{diagnose, DiagnosticReport, DiagnosticRow, PILOT_ROLLOUTS};
pub use metrics::{export_curves, read_metrics, MetricsWriter, TrainingMetrics, METRICS_SCHEMA};
pub use optim::{adam_step, adam_update, AdamConfig};
pub use trainer::{evaluate, Trainer};
