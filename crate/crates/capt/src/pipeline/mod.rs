//! End-to-end commands: configuration, training, evaluation, inference.

pub mod config;
pub mod eval;
pub mod infer;
pub mod train;

pub use config::{OptimConfig, RunConfig};
pub use eval::{evaluate, evaluate_set, write_reports, SplitEval};
pub use infer::{infer, InferRecord, MIN_INFER_POINTS};
pub use train::{train, TrainOutcome};
