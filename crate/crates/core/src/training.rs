//! Mini-batch Adam with validation early stopping, and the lambda search
//! for the fixed-weight loss.

use std::time::Instant;

use pif_autodiff::{AdError, Shape, Tape};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SeriesDataset, Split, Window};
use crate::losses::{self, FixedWeight, LossConfig, LossError, RbaState, UncertaintyParams};
use crate::metrics::rmse;
use crate::neural::{hash_params, NeuralError, NeuralModel};
use crate::rng;

pub const DEFAULT_MAX_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_PATIENCE: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),

    #[error("{0} loss needs a prior attached to the dataset")]
    MissingPrior(&'static str),

    #[error("{0:?} split is empty")]
    EmptySplit(Split),

    #[error("non-finite loss in epoch {epoch}; last finite epoch was {last_finite_epoch}")]
    NonFinite { epoch: usize, last_finite_epoch: usize },

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error(transparent)]
    Loss(#[from] LossError),
}

impl From<AdError> for TrainError {
    fn from(e: AdError) -> Self {
        TrainError::Neural(NeuralError::Autodiff(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// `None` uses the family default (5e-4 for the Transformer, 1e-3 otherwise).
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
}

fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_patience() -> usize {
    DEFAULT_PATIENCE
}
fn default_loss() -> LossConfig {
    LossConfig::DataOnly
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: None,
            patience: DEFAULT_PATIENCE,
            seed: 0,
            loss: LossConfig::DataOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(TrainError::Config(format!("learning_rate must be positive, got {lr}")));
            }
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates `params` in place; entries with a `false` mask are skipped.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], mask: Option<&[bool]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub family: String,
    pub loss: String,
    pub lambda: Option<f64>,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub train_loss: Vec<f64>,
    /// Normalized-unit validation RMSE after each epoch.
    pub val_rmse: Vec<f64>,
    pub epoch_checksums: Vec<String>,
    pub seconds: f64,
    pub checksum: String,
    pub uncertainty: Option<UncertaintyParams>,
}

impl TrainReport {
    /// `epoch,train_loss,val_rmse` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_rmse\n");
        for (i, (l, v)) in self.train_loss.iter().zip(&self.val_rmse).enumerate() {
            out.push_str(&format!("{},{l},{v}\n", i + 1));
        }
        out
    }
}

struct Batch {
    ids: Vec<usize>,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    priors: Vec<f64>,
}

fn gather(windows: &[Window], ids: &[usize], lookback: usize) -> Batch {
    let mut inputs = Vec::with_capacity(ids.len() * lookback);
    let mut targets = Vec::with_capacity(ids.len());
    let mut priors = Vec::with_capacity(ids.len());
    for &i in ids {
        let w = &windows[i];
        inputs.extend_from_slice(&w.input);
        targets.push(w.target);
        priors.push(w.prior.unwrap_or(f64::NAN));
    }
    Batch {
        ids: ids.to_vec(),
        inputs,
        targets,
        priors,
    }
}

/// Normalized-unit RMSE of `model` against the targets of `split`.
pub fn split_rmse(model: &NeuralModel, dataset: &SeriesDataset, split: Split) -> Result<f64, TrainError> {
    let pred = model.predict_normalized(dataset, split)?;
    let truth: Vec<f64> = dataset.split(split).iter().map(|w| w.target).collect();
    rmse(&pred, &truth).map_err(|_| TrainError::EmptySplit(split))
}

fn non_finite(epoch: usize, best_epoch: usize) -> TrainError {
    TrainError::NonFinite {
        epoch,
        last_finite_epoch: best_epoch.max(epoch.saturating_sub(1)),
    }
}

/// Trains until the validation RMSE stalls for `patience` epochs, then
/// restores the best epoch.
pub fn train(mut model: NeuralModel, dataset: &SeriesDataset, config: &TrainConfig) -> Result<(NeuralModel, TrainReport), TrainError> {
    let start = Instant::now();
    config.validate()?;
    if dataset.lookback() != model.lookback() {
        return Err(NeuralError::Lookback {
            model: model.lookback(),
            dataset: dataset.lookback(),
        }
        .into());
    }
    let lambda = match config.loss {
        LossConfig::Fixed { lambda: Some(l) } => Some(FixedWeight::new(l)?),
        LossConfig::Fixed { lambda: None } => {
            return Err(TrainError::Config(
                "fixed loss needs a lambda here; run the lambda search to choose one".into(),
            ))
        }
        _ => None,
    };
    if config.loss.uses_prior() && !dataset.has_prior() {
        return Err(TrainError::MissingPrior(config.loss.label()));
    }
    let train_windows = dataset.split(Split::Train);
    if train_windows.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if dataset.split(Split::Validation).is_empty() {
        return Err(TrainError::EmptySplit(Split::Validation));
    }

    let lr = config.learning_rate.unwrap_or(model.family().default_learning_rate());
    let lookback = model.lookback();
    let mut adam = Adam::new(model.parameter_count(), lr);
    let mask = model.trainable_mask();
    let mask = mask.iter().any(|m| !m).then_some(mask);
    let mut uncertainty = UncertaintyParams::default();
    let mut adam_u = Adam::new(2, lr);
    let mut rba = match config.loss {
        LossConfig::Rba { eta } => Some(RbaState::new(train_windows.len(), eta)?),
        _ => None,
    };

    let mut params = model.params().to_vec();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut tape = Tape::new();
    let mut report = TrainReport {
        family: model.family().label().to_string(),
        loss: config.loss.label().to_string(),
        lambda: lambda.map(|l| l.lambda()),
        epochs_run: 0,
        best_epoch: 0,
        best_val_rmse: f64::INFINITY,
        train_loss: Vec::new(),
        val_rmse: Vec::new(),
        epoch_checksums: Vec::new(),
        seconds: 0.0,
        checksum: String::new(),
        uncertainty: None,
    };
    let mut best_params = params.clone();
    let mut best_uncertainty = uncertainty;

    for epoch in 1..=config.max_epochs {
        let mut g = rng::seeded(rng::derive_seed(config.seed, epoch as u64));
        order.shuffle(&mut g);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather(train_windows, chunk, lookback);
            let n = chunk.len();
            tape.clear();
            let bound = model.bind(&mut tape)?;
            let x = tape
                .matrix(n, lookback, batch.inputs)
                .map_err(|_| non_finite(epoch, report.best_epoch))?;
            let pred = match model.forward_batch(&mut tape, &bound, x) {
                Err(NeuralError::Autodiff(AdError::NonFinite { .. })) => return Err(non_finite(epoch, report.best_epoch)),
                other => other?,
            };
            let pred = tape.reshape(pred, Shape::Vector(n))?;
            let mut log_sigmas = None;
            let loss = match config.loss {
                LossConfig::DataOnly => losses::mse(&mut tape, pred, &batch.targets),
                LossConfig::Fixed { .. } => {
                    losses::fixed_loss(&mut tape, pred, &batch.targets, &batch.priors, lambda.expect("checked above"))
                }
                LossConfig::Uncertainty => {
                    let (a, b) = uncertainty.bind(&mut tape)?;
                    log_sigmas = Some((a, b));
                    losses::uncertainty_loss(&mut tape, pred, &batch.targets, &batch.priors, a, b)
                }
                LossConfig::Rba { .. } => {
                    let state = rba.as_mut().expect("rba state");
                    let current = tape.value(pred).to_vec();
                    state.update(&batch.ids, &current, &batch.targets, &batch.priors)?;
                    losses::rba_loss(&mut tape, state, &batch.ids, pred, &batch.targets, &batch.priors)
                }
            };
            let loss = match loss {
                Err(LossError::Autodiff(AdError::NonFinite { .. })) => return Err(non_finite(epoch, report.best_epoch)),
                other => other?,
            };
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(non_finite(epoch, report.best_epoch));
            }
            let grads = tape.backward(loss)?;
            let flat = model.flat_gradient(&grads, &bound);
            adam.step(&mut params, &flat, mask.as_deref());
            model.set_params(&params)?;
            if let Some((a, b)) = log_sigmas {
                let gu = [grads.get(a)[0], grads.get(b)[0]];
                let mut u = [uncertainty.log_sigma_data, uncertainty.log_sigma_pi];
                adam_u.step(&mut u, &gu, None);
                uncertainty = UncertaintyParams {
                    log_sigma_data: u[0],
                    log_sigma_pi: u[1],
                };
            }
            loss_sum += value;
            batches += 1;
        }
        let val = match split_rmse(&model, dataset, Split::Validation) {
            Err(TrainError::Neural(NeuralError::Autodiff(AdError::NonFinite { .. }))) => return Err(non_finite(epoch, report.best_epoch)),
            other => other?,
        };
        if !val.is_finite() {
            return Err(non_finite(epoch, report.best_epoch));
        }
        report.epochs_run = epoch;
        report.train_loss.push(loss_sum / batches as f64);
        report.val_rmse.push(val);
        report.epoch_checksums.push(model.checksum());
        if val < report.best_val_rmse {
            report.best_val_rmse = val;
            report.best_epoch = epoch;
            best_params.copy_from_slice(&params);
            best_uncertainty = uncertainty;
        } else if epoch - report.best_epoch >= config.patience {
            break;
        }
    }

    model.set_params(&best_params)?;
    report.checksum = model.checksum();
    if matches!(config.loss, LossConfig::Uncertainty) {
        report.uncertainty = Some(best_uncertainty);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub val_rmse: f64,
    pub model: NeuralModel,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    /// `(lambda, validation RMSE)` in grid order.
    pub table: Vec<(f64, f64)>,
    pub trials: Vec<LambdaTrial>,
}

impl LambdaSearch {
    pub fn best(&self) -> &LambdaTrial {
        self.trials
            .iter()
            .find(|t| t.lambda == self.best_lambda)
            .expect("best lambda is in the grid")
    }

    pub fn trial(&self, lambda: f64) -> Option<&LambdaTrial> {
        self.trials.iter().find(|t| t.lambda == lambda)
    }
}

/// Lowest validation RMSE; ties go to the smaller lambda.
pub fn select_lambda(table: &[(f64, f64)]) -> Option<f64> {
    table
        .iter()
        .cloned()
        .reduce(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
        .map(|(l, _)| l)
}

/// Trains one fixed-weight model per grid value from the same factory and
/// seed. Grid points run on the current rayon pool.
pub fn search_lambda<F>(factory: F, dataset: &SeriesDataset, config: &TrainConfig, grid: &[f64]) -> Result<LambdaSearch, TrainError>
where
    F: Fn() -> Result<NeuralModel, NeuralError> + Sync,
{
    if grid.is_empty() {
        return Err(TrainError::Config("lambda grid is empty".into()));
    }
    let trials: Vec<LambdaTrial> = grid
        .par_iter()
        .map(|&lambda| {
            let mut cfg = *config;
            cfg.loss = LossConfig::Fixed { lambda: Some(lambda) };
            let (model, report) = train(factory()?, dataset, &cfg)?;
            Ok(LambdaTrial {
                lambda,
                val_rmse: report.best_val_rmse,
                model,
                report,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let table: Vec<(f64, f64)> = trials.iter().map(|t| (t.lambda, t.val_rmse)).collect();
    let best_lambda = select_lambda(&table).expect("non-empty grid");
    Ok(LambdaSearch {
        best_lambda,
        table,
        trials,
    })
}

/// Checksum helper shared with reports.
pub fn params_checksum(params: &[f64]) -> String {
    hash_params(params.iter())
}
