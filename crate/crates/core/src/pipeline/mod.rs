//! Staged training, evaluation, configuration and reporting.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod train;

pub use config::{LossKind, Matcher, TrainConfig};
pub use eval::{evaluate, evaluate_features, score_query, DirectionMetrics, MetricsReport, QueryScore};
pub use experiment::{run_experiment, ExperimentResult};
pub use train::{train, CurveRow, Model, TrainLog, Trainer};
