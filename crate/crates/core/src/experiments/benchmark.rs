use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{blend, blend_grid, search_blend_weights, BlendWeights, ClassicalKind, ClassicalModel};
use crate::data::{SeriesDataset, Split, Window};
use crate::losses::LossConfig;
use crate::metrics::{EvalReport, Units};
use crate::neural::{build, Family, NeuralModel, SizeTier};
use crate::rng;
use crate::training::{search_lambda, train, TrainReport};

use super::plan::{BenchmarkPlan, ModelKind, TrainPlan};
use super::{ExperimentError, RunOptions};

/// A prepared dataset with the name its rows carry.
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    /// Clean series with the prior attached when a recipe is known.
    pub clean: SeriesDataset,
    /// What the models train on; equals `clean` unless training noise is set.
    pub training: SeriesDataset,
}

/// Identifies one result row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowId {
    pub dataset: String,
    /// Table name: the family, with `_<strategy>` appended for physics
    /// informed losses and `_fixed` for blended classical models.
    pub model: String,
    pub family: String,
    pub strategy: String,
    pub tier: Option<usize>,
    pub seed: Option<u64>,
}

impl RowId {
    /// Label used in flat tables and plots.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.dataset != "primary" {
            s.push_str(&self.dataset);
            s.push('/');
        }
        s.push_str(&self.model);
        if let Some(t) = self.tier {
            s.push_str(&format!("@{t}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: RowId,
    pub parameters: Option<usize>,
    pub lambda: Option<f64>,
    pub blend: Option<BlendWeights>,
    pub normalized: EvalReport,
    pub celsius: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rmse: f64,
    pub linf_rmse: f64,
    pub gradient_error: f64,
    pub linf_grad_error: f64,
    pub train_seconds: f64,
}

impl MetricSummary {
    pub(crate) fn of(r: &EvalReport) -> Self {
        Self {
            rmse: r.rmse,
            linf_rmse: r.linf_rmse,
            gradient_error: r.gradient_error,
            linf_grad_error: r.linf_grad_error,
            train_seconds: r.train_seconds,
        }
    }

    fn fields(&self) -> [f64; 5] {
        [
            self.rmse,
            self.linf_rmse,
            self.gradient_error,
            self.linf_grad_error,
            self.train_seconds,
        ]
    }

    fn from_fields(f: [f64; 5]) -> Self {
        Self {
            rmse: f[0],
            linf_rmse: f[1],
            gradient_error: f[2],
            linf_grad_error: f[3],
            train_seconds: f[4],
        }
    }

    /// Mean and sample standard deviation (zero for a single entry).
    pub(crate) fn mean_std(items: &[MetricSummary]) -> (Self, Self) {
        let n = items.len() as f64;
        let mut mean = [0.0; 5];
        for it in items {
            for (m, v) in mean.iter_mut().zip(it.fields()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 5];
        if items.len() > 1 {
            for it in items {
                for ((s, v), m) in var.iter_mut().zip(it.fields()).zip(mean) {
                    *s += (v - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
        }
        (Self::from_fields(mean), Self::from_fields(var))
    }
}

/// Seed-aggregated row: one per dataset, model name and tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub id: RowId,
    pub parameters: Option<usize>,
    pub seeds: usize,
    pub normalized_mean: MetricSummary,
    pub normalized_std: MetricSummary,
    pub celsius_mean: MetricSummary,
    pub celsius_std: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Neural(NeuralModel),
    Classical {
        model: ClassicalModel,
        blend: Option<BlendWeights>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub id: RowId,
    pub predictor: Predictor,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub record_timing: bool,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
    pub reports: Vec<(RowId, TrainReport)>,
    pub lambda_tables: Vec<(RowId, Vec<(f64, f64)>)>,
    pub models: Vec<TrainedModel>,
    pub datasets: Vec<NamedDataset>,
}

impl BenchmarkOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Normalized test-split predictions.
pub fn evaluate(predictor: &Predictor, dataset: &SeriesDataset, split: Split) -> Result<Vec<f64>, ExperimentError> {
    let windows = dataset.split(split);
    match predictor {
        Predictor::Neural(m) => Ok(m.predict_windows(windows.iter().map(|w| w.input.as_slice()))?),
        Predictor::Classical { model, blend: weights } => {
            let indices: Vec<usize> = windows.iter().map(|w| w.index).collect();
            let pred = model.predict_indices(&indices)?;
            match weights {
                None => Ok(pred),
                Some(w) => Ok(blend(&pred, &priors(windows)?, *w)?),
            }
        }
    }
}

fn priors(windows: &[Window]) -> Result<Vec<f64>, ExperimentError> {
    windows
        .iter()
        .map(|w| {
            w.prior
                .ok_or_else(|| ExperimentError::config("dataset.recipe", "blending needs a prior"))
        })
        .collect()
}

/// Scores normalized predictions against the split targets in both units.
pub(crate) fn score(
    name: &str,
    pred: &[f64],
    dataset: &SeriesDataset,
    split: Split,
    train_seconds: f64,
) -> Result<(EvalReport, EvalReport), ExperimentError> {
    let truth: Vec<f64> = dataset.split(split).iter().map(|w| w.target).collect();
    let norm = dataset.norm();
    let normalized = EvalReport::compute(name, pred, &truth, train_seconds, Units::Normalized)?;
    let pred_c: Vec<f64> = pred.iter().map(|&z| norm.invert(z)).collect();
    let truth_c: Vec<f64> = truth.iter().map(|&z| norm.invert(z)).collect();
    let celsius = EvalReport::compute(name, &pred_c, &truth_c, train_seconds, Units::Celsius)?;
    Ok((normalized, celsius))
}

pub(crate) fn neural_name(family: Family, loss: &LossConfig) -> String {
    match loss {
        LossConfig::DataOnly => family.label().to_string(),
        other => format!("{}_{}", family.label(), other.label()),
    }
}

/// The classical training series: the span covered by training windows,
/// taken from the windows so training noise carries over.
fn classical_series(dataset: &SeriesDataset) -> Vec<f64> {
    let train = dataset.split(Split::Train);
    let mut series = train[0].input.clone();
    series.extend(train.iter().map(|w| w.target));
    series
}

enum Cell {
    Classical(ClassicalKind),
    Neural {
        family: Family,
        loss: LossConfig,
        tier: usize,
        seed: u64,
    },
}

impl Cell {
    fn describe(&self) -> String {
        match self {
            Cell::Classical(k) => k.label().to_string(),
            Cell::Neural { family, loss, tier, seed } => format!("{} tier {tier} seed {seed}", neural_name(*family, loss)),
        }
    }
}

#[derive(Default)]
struct CellResult {
    rows: Vec<ResultRow>,
    models: Vec<TrainedModel>,
    reports: Vec<(RowId, TrainReport)>,
    lambda_table: Option<(RowId, Vec<(f64, f64)>)>,
}

fn run_classical(kind: ClassicalKind, ds: &NamedDataset, timing: bool) -> Result<CellResult, ExperimentError> {
    let model = kind.fit_default(&classical_series(&ds.training))?;
    let seconds = if timing { model.fit_seconds() } else { 0.0 };
    let mut out = CellResult::default();
    let mut variants = vec![(kind.label().to_string(), "classical", None)];
    if ds.training.has_prior() {
        let val = ds.training.split(Split::Validation);
        let plain = Predictor::Classical {
            model: model.clone(),
            blend: None,
        };
        let val_pred = evaluate(&plain, &ds.training, Split::Validation)?;
        let truth: Vec<f64> = val.iter().map(|w| w.target).collect();
        let search = search_blend_weights(&val_pred, &priors(val)?, &truth, &blend_grid())?;
        variants.push((format!("{}_fixed", kind.label()), "blend", Some(search.best)));
    }
    for (name, strategy, weights) in variants {
        let id = RowId {
            dataset: ds.name.clone(),
            model: name.clone(),
            family: kind.label().to_string(),
            strategy: strategy.to_string(),
            tier: None,
            seed: None,
        };
        let predictor = Predictor::Classical {
            model: model.clone(),
            blend: weights,
        };
        let pred = evaluate(&predictor, &ds.clean, Split::Test)?;
        let (normalized, celsius) = score(&name, &pred, &ds.clean, Split::Test, seconds)?;
        out.rows.push(ResultRow {
            id: id.clone(),
            parameters: None,
            lambda: None,
            blend: weights,
            normalized,
            celsius,
        });
        out.models.push(TrainedModel {
            id,
            predictor,
            train_seconds: seconds,
        });
    }
    Ok(out)
}

struct NeuralJob<'a> {
    family: Family,
    loss: LossConfig,
    tier: usize,
    seed: u64,
    lookback: usize,
    settings: &'a super::plan::TrainSettings,
    lambda_grid: &'a [f64],
    timing: bool,
}

fn run_neural(job: &NeuralJob, ds: &NamedDataset) -> Result<CellResult, ExperimentError> {
    let tier = SizeTier::with_target(job.tier);
    let factory = || build(job.family, job.lookback, tier, job.seed);
    let config = job.settings.config(job.seed, job.loss);
    let name = neural_name(job.family, &job.loss);
    let id = RowId {
        dataset: ds.name.clone(),
        model: name.clone(),
        family: job.family.label().to_string(),
        strategy: job.loss.label().to_string(),
        tier: Some(job.tier),
        seed: Some(job.seed),
    };
    let mut out = CellResult::default();
    let (model, mut report) = match job.loss {
        LossConfig::Fixed { lambda: None } => {
            let search = search_lambda(factory, &ds.training, &config, job.lambda_grid)?;
            out.lambda_table = Some((id.clone(), search.table.clone()));
            let best = search.best();
            (best.model.clone(), best.report.clone())
        }
        _ => train(factory()?, &ds.training, &config)?,
    };
    if !job.timing {
        report.seconds = 0.0;
    }
    let predictor = Predictor::Neural(model);
    let pred = evaluate(&predictor, &ds.clean, Split::Test)?;
    let (normalized, celsius) = score(&name, &pred, &ds.clean, Split::Test, report.seconds)?;
    let Predictor::Neural(model) = &predictor else { unreachable!() };
    out.rows.push(ResultRow {
        id: id.clone(),
        parameters: Some(model.parameter_count()),
        lambda: report.lambda,
        blend: None,
        normalized,
        celsius,
    });
    out.models.push(TrainedModel {
        id: id.clone(),
        train_seconds: report.seconds,
        predictor,
    });
    out.reports.push((id, report));
    Ok(out)
}

pub(crate) fn prepare_dataset(
    name: &str,
    key: &str,
    spec: &super::DatasetSpec,
    lookback: usize,
    training_noise: Option<f64>,
    seed: u64,
    options: &RunOptions,
) -> Result<NamedDataset, ExperimentError> {
    let (raw, recipe) = spec.load(key, options.base_dir.as_deref())?;
    let mut clean = SeriesDataset::prepare(raw, lookback).map_err(|e| ExperimentError::config(key, e.to_string()))?;
    if let Some(r) = &recipe {
        clean = clean.with_prior(r)?;
    }
    let training = match training_noise {
        Some(sigma) => clean.inject_training_noise(sigma, seed)?,
        None => clean.clone(),
    };
    Ok(NamedDataset {
        name: name.to_string(),
        clean,
        training,
    })
}

/// Runs every cell of the plan on the bounded pool. Cells that fail are
/// recorded and the rest of the plan continues.
pub fn run_benchmark(plan: &BenchmarkPlan, options: &RunOptions) -> Result<BenchmarkOutcome, ExperimentError> {
    plan.validate()?;
    let training_noise_seed = rng::derive_seed(plan.noise.seed, u64::MAX);
    let mut datasets = vec![prepare_dataset(
        "primary",
        "dataset",
        &plan.dataset,
        plan.lookback,
        plan.training_noise,
        training_noise_seed,
        options,
    )?];
    if let Some(spec) = &plan.secondary {
        datasets.push(prepare_dataset(
            "secondary",
            "secondary",
            spec,
            plan.lookback,
            plan.training_noise,
            training_noise_seed,
            options,
        )?);
    }
    let needs_prior = plan.losses.iter().any(|l| l.uses_prior()) && plan.models.iter().any(|m| matches!(m, ModelKind::Neural(_)));
    for ds in &datasets {
        if needs_prior && !ds.clean.has_prior() {
            let key = if ds.name == "primary" {
                "dataset.recipe"
            } else {
                "secondary.recipe"
            };
            return Err(ExperimentError::config(key, "physics-informed losses need a recipe"));
        }
    }

    let mut cells = Vec::new();
    for (d, _) in datasets.iter().enumerate() {
        for model in &plan.models {
            match *model {
                ModelKind::Classical(kind) => cells.push((d, Cell::Classical(kind))),
                ModelKind::Neural(family) => {
                    for loss in &plan.losses {
                        for &tier in &plan.tiers {
                            for &seed in &plan.seeds {
                                cells.push((
                                    d,
                                    Cell::Neural {
                                        family,
                                        loss: *loss,
                                        tier,
                                        seed,
                                    },
                                ));
                            }
                        }
                    }
                }
            }
        }
    }

    let pool = options.pool()?;
    let results: Vec<Result<CellResult, ExperimentError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(d, cell)| {
                if options.cancelled() {
                    return Err(ExperimentError::Interrupted);
                }
                let ds = &datasets[*d];
                match cell {
                    Cell::Classical(kind) => run_classical(*kind, ds, plan.record_timing),
                    Cell::Neural { family, loss, tier, seed } => run_neural(
                        &NeuralJob {
                            family: *family,
                            loss: *loss,
                            tier: *tier,
                            seed: *seed,
                            lookback: plan.lookback,
                            settings: &plan.train,
                            lambda_grid: &plan.lambda_grid,
                            timing: plan.record_timing,
                        },
                        ds,
                    ),
                }
            })
            .collect()
    });

    let mut outcome = BenchmarkOutcome {
        record_timing: plan.record_timing,
        rows: Vec::new(),
        aggregates: Vec::new(),
        failures: Vec::new(),
        reports: Vec::new(),
        lambda_tables: Vec::new(),
        models: Vec::new(),
        datasets: Vec::new(),
    };
    for ((d, cell), result) in cells.iter().zip(results) {
        match result {
            Ok(r) => {
                outcome.rows.extend(r.rows);
                outcome.models.extend(r.models);
                outcome.reports.extend(r.reports);
                outcome.lambda_tables.extend(r.lambda_table);
            }
            Err(e) => outcome.failures.push(CellFailure {
                dataset: datasets[*d].name.clone(),
                cell: cell.describe(),
                error: e.to_string(),
            }),
        }
    }
    outcome.aggregates = aggregate(&outcome.rows);
    outcome.datasets = datasets;
    Ok(outcome)
}

/// Groups rows by everything but the seed, in first-appearance order.
pub(crate) fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut order: Vec<RowId> = Vec::new();
    let mut groups: BTreeMap<RowId, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        let key = RowId {
            seed: None,
            ..row.id.clone()
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let norm: Vec<MetricSummary> = members.iter().map(|r| MetricSummary::of(&r.normalized)).collect();
            let cels: Vec<MetricSummary> = members.iter().map(|r| MetricSummary::of(&r.celsius)).collect();
            let (normalized_mean, normalized_std) = MetricSummary::mean_std(&norm);
            let (celsius_mean, celsius_std) = MetricSummary::mean_std(&cels);
            AggregateRow {
                parameters: members[0].parameters,
                seeds: members.len(),
                id: key,
                normalized_mean,
                normalized_std,
                celsius_mean,
                celsius_std,
            }
        })
        .collect()
}

/// Result of training one model from a [`TrainPlan`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NeuralModel,
    pub report: TrainReport,
    pub lambda_table: Option<Vec<(f64, f64)>>,
    pub row: ResultRow,
}

pub fn run_train(plan: &TrainPlan, options: &RunOptions) -> Result<TrainOutcome, ExperimentError> {
    plan.validate()?;
    let ds = prepare_dataset("primary", "dataset", &plan.dataset, plan.lookback, None, 0, options)?;
    if plan.loss.uses_prior() && !ds.clean.has_prior() {
        return Err(ExperimentError::config("dataset.recipe", "physics-informed losses need a recipe"));
    }
    let job = NeuralJob {
        family: plan.model,
        loss: plan.loss,
        tier: plan.tier,
        seed: plan.seed,
        lookback: plan.lookback,
        settings: &plan.train,
        lambda_grid: &plan.lambda_grid,
        timing: plan.record_timing,
    };
    let pool = options.pool()?;
    let mut result = pool.install(|| run_neural(&job, &ds))?;
    let (_, report) = result.reports.pop().expect("one report per neural cell");
    let Predictor::Neural(model) = result.models.pop().expect("one model per neural cell").predictor else {
        unreachable!()
    };
    Ok(TrainOutcome {
        model,
        report,
        lambda_table: result.lambda_table.map(|(_, t)| t),
        row: result.rows.pop().expect("one row per neural cell"),
    })
}
