use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::losses::LossConfig;
use crate::metrics::EvalReport;
use crate::neural::{build, load_checkpoint, AffineHead, NeuralError, NeuralModel, SizeTier};
use crate::rng;
use crate::training::train;

use super::benchmark::{evaluate, prepare_dataset, score, MetricSummary, NamedDataset, Predictor};
use super::plan::{TransferPlan, TransferSource, TransferStrategy};
use super::{ExperimentError, RunOptions};

/// Seed stream for the fresh probe head.
const HEAD_STREAM: u64 = 0x4845_4144;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub strategy: TransferStrategy,
    pub seed: u64,
    pub source_checksum: String,
    pub body_checksum_before: String,
    pub body_checksum_after: String,
    pub epochs_run: usize,
    pub normalized: EvalReport,
    pub celsius: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferAggregate {
    pub strategy: TransferStrategy,
    pub seeds: usize,
    pub normalized_mean: MetricSummary,
    pub normalized_std: MetricSummary,
    pub celsius_mean: MetricSummary,
    pub celsius_std: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub record_timing: bool,
    pub rows: Vec<TransferRow>,
    pub aggregates: Vec<TransferAggregate>,
}

/// Loads or pre-trains the source, then runs every strategy for every
/// seed on the target dataset.
pub fn run_transfer(plan: &TransferPlan, options: &RunOptions) -> Result<TransferOutcome, ExperimentError> {
    plan.validate()?;
    let pool = options.pool()?;
    match &plan.source {
        TransferSource::Checkpoint(path) => {
            let path = match &options.base_dir {
                Some(b) if std::path::Path::new(path).is_relative() => b.join(path),
                _ => path.into(),
            };
            let source = load_checkpoint(&path).map_err(|e| match e {
                NeuralError::Io(io) => ExperimentError::config("source.checkpoint", format!("{}: {io}", path.display())),
                other => ExperimentError::config("source.checkpoint", other.to_string()),
            })?;
            let target = prepare_target(plan, source.lookback(), options)?;
            let sources: Vec<(u64, NeuralModel)> = plan.seeds.iter().map(|&s| (s, source.clone())).collect();
            pool.install(|| run_transfer_from(plan, &sources, &target, options))
        }
        TransferSource::Pretrain(spec) => {
            let source_ds = prepare_dataset("source", "source.pretrain.dataset", &spec.dataset, spec.lookback, None, 0, options)?;
            if spec.loss.uses_prior() && !source_ds.clean.has_prior() {
                return Err(ExperimentError::config(
                    "source.pretrain.dataset.recipe",
                    "physics-informed losses need a recipe",
                ));
            }
            let target = prepare_target(plan, spec.lookback, options)?;
            let tier = SizeTier::with_target(spec.tier);
            let sources: Vec<Result<(u64, NeuralModel), ExperimentError>> = pool.install(|| {
                plan.seeds
                    .par_iter()
                    .map(|&seed| {
                        if options.cancelled() {
                            return Err(ExperimentError::Interrupted);
                        }
                        let model = build(spec.model, spec.lookback, tier, seed)?;
                        let (model, _) = train(model, &source_ds.training, &plan.train.config(seed, spec.loss))?;
                        Ok((seed, model))
                    })
                    .collect()
            });
            let sources = sources.into_iter().collect::<Result<Vec<_>, _>>()?;
            pool.install(|| run_transfer_from(plan, &sources, &target, options))
        }
    }
}

fn prepare_target(plan: &TransferPlan, lookback: usize, options: &RunOptions) -> Result<NamedDataset, ExperimentError> {
    if let Some(l) = plan.lookback {
        if l != lookback {
            return Err(ExperimentError::Neural(NeuralError::Lookback {
                model: lookback,
                dataset: l,
            }));
        }
    }
    prepare_dataset("target", "target", &plan.target, lookback, None, 0, options)
}

/// Runs the strategies against already available source models, one per
/// seed, on the current rayon pool.
pub fn run_transfer_from(
    plan: &TransferPlan,
    sources: &[(u64, NeuralModel)],
    target: &NamedDataset,
    options: &RunOptions,
) -> Result<TransferOutcome, ExperimentError> {
    let jobs: Vec<(usize, TransferStrategy)> = (0..sources.len())
        .flat_map(|i| plan.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<Result<TransferRow, ExperimentError>> = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            if options.cancelled() {
                return Err(ExperimentError::Interrupted);
            }
            let (seed, source) = &sources[i];
            run_strategy(plan, strategy, *seed, source, target)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let aggregates = plan
        .strategies
        .iter()
        .map(|&strategy| {
            let members: Vec<&TransferRow> = rows.iter().filter(|r| r.strategy == strategy).collect();
            let norm: Vec<MetricSummary> = members.iter().map(|r| MetricSummary::of(&r.normalized)).collect();
            let cels: Vec<MetricSummary> = members.iter().map(|r| MetricSummary::of(&r.celsius)).collect();
            let (normalized_mean, normalized_std) = MetricSummary::mean_std(&norm);
            let (celsius_mean, celsius_std) = MetricSummary::mean_std(&cels);
            TransferAggregate {
                strategy,
                seeds: members.len(),
                normalized_mean,
                normalized_std,
                celsius_mean,
                celsius_std,
            }
        })
        .collect();
    Ok(TransferOutcome {
        record_timing: plan.record_timing,
        rows,
        aggregates,
    })
}

fn run_strategy(
    plan: &TransferPlan,
    strategy: TransferStrategy,
    seed: u64,
    source: &NeuralModel,
    target: &NamedDataset,
) -> Result<TransferRow, ExperimentError> {
    if source.lookback() != target.clean.lookback() {
        return Err(ExperimentError::Neural(NeuralError::Lookback {
            model: source.lookback(),
            dataset: target.clean.lookback(),
        }));
    }
    let before = source.body_checksum();
    let (model, seconds, epochs) = match strategy {
        TransferStrategy::BaselineEval => (source.clone(), 0.0, 0),
        TransferStrategy::LinearProbe => {
            let width = source.architecture().head_width();
            let probe = source.replace_head(&AffineHead::random(width, rng::derive_seed(seed, HEAD_STREAM)))?;
            let mut config = plan.train.config(seed, LossConfig::DataOnly);
            config.learning_rate = Some(plan.probe_learning_rate);
            let (model, report) = train(probe, &target.training, &config)?;
            (model, report.seconds, report.epochs_run)
        }
        TransferStrategy::FullFinetune => {
            let mut model = source.clone();
            model.unfreeze();
            let mut config = plan.train.config(seed, LossConfig::DataOnly);
            let base = plan.train.learning_rate.unwrap_or(model.family().default_learning_rate());
            config.learning_rate = Some(base * plan.finetune_rate_factor);
            let (model, report) = train(model, &target.training, &config)?;
            (model, report.seconds, report.epochs_run)
        }
    };
    let seconds = if plan.record_timing { seconds } else { 0.0 };
    let after = model.body_checksum();
    let predictor = Predictor::Neural(model);
    let pred = evaluate(&predictor, &target.clean, Split::Test)?;
    let (normalized, celsius) = score(strategy.label(), &pred, &target.clean, Split::Test, seconds)?;
    Ok(TransferRow {
        strategy,
        seed,
        source_checksum: source.checksum(),
        body_checksum_before: before,
        body_checksum_after: after,
        epochs_run: epochs,
        normalized,
        celsius,
    })
}
