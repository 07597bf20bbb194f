//! The three studies: model benchmark, noise-robustness sweep and transfer
//! to a second recipe, plus their on-disk outputs.

mod benchmark;
mod noise;
pub mod output;
mod plan;
mod transfer;

use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::classical::ClassicalError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::neural::NeuralError;
use crate::recipe::RecipeError;
use crate::training::TrainError;

pub use benchmark::{
    evaluate, run_benchmark, run_train, AggregateRow, BenchmarkOutcome, CellFailure, MetricSummary, NamedDataset, Predictor, ResultRow,
    RowId, TrainOutcome, TrainedModel,
};
pub use noise::{run_noise_sweep, NoiseAggregate, NoisePoint, NoiseSweep};
pub use plan::{
    default_sigma_grid, BenchmarkPlan, DatasetSpec, ModelKind, NoiseSpec, PretrainSpec, TrainPlan, TrainSettings, TransferPlan,
    TransferSource, TransferStrategy, DEFAULT_LOOKBACK,
};
pub use transfer::{run_transfer, run_transfer_from, TransferAggregate, TransferOutcome, TransferRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("config file: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Recipe(#[from] RecipeError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error(transparent)]
    Classical(#[from] ClassicalError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("no trained model for dataset `{0}`")]
    MissingModel(String),

    #[error("worker pool: {0}")]
    Pool(String),

    #[error("interrupted")]
    Interrupted,
}

impl ExperimentError {
    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        ExperimentError::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    /// True when the fault lies in the plan or an input it names rather
    /// than in the run itself.
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config { .. } | ExperimentError::Json(_) | ExperimentError::Recipe(_) => true,
            ExperimentError::Data(e) => !matches!(e, DataError::Sigma(_)),
            ExperimentError::Train(TrainError::Config(_)) => true,
            ExperimentError::Neural(NeuralError::Infeasible { .. } | NeuralError::Lookback { .. } | NeuralError::Checkpoint(_)) => true,
            _ => false,
        }
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    /// Directory that relative paths in the plan resolve against.
    pub base_dir: Option<PathBuf>,
    /// Set from a signal handler; cells not yet started are skipped.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    pub(crate) fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool, ExperimentError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = self.jobs {
            if jobs == 0 {
                return Err(ExperimentError::config("jobs", "must be at least 1"));
            }
            builder = builder.num_threads(jobs);
        }
        builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))
    }
}
