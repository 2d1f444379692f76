//! Optimization, early stopping and evaluation metrics.

mod adam;
mod metrics;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use metrics::{metrics, Evaluation, MetricAccumulator, Metrics};
pub use trainer::{
    evaluate, forecasts, predictions_csv, train, train_observed, Control, EpochRecord, History, TrainConfig,
};
