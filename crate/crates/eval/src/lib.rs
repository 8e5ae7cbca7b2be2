//! Training and evaluation around the pain-assessment models: losses, the
//! leave-one-subject-out harness with its metrics, frame I/O and preprocessing,
//! the synthetic dataset, and model-size accounting.

pub mod blur;
pub mod config;
pub mod counts;
pub mod data;
pub mod experiment;
pub mod gradsuite;
pub mod loso;
pub mod loss;
pub mod metrics;

pub use blur::gaussian_blur;
pub use config::Config;
pub use experiment::{run_experiment, ExperimentRun, Pipeline, RunSpec, VideoSample};
pub use loso::{loso_split, Fold};
pub use loss::{cross_entropy, multitask_loss, MultiTaskWeights};
pub use metrics::{compute_metrics, FoldResult, MetricsReport, Task};
