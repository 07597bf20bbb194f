use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NoiseMode, Split};
use crate::metrics::EvalReport;
use crate::rng;

use super::benchmark::{evaluate, score, MetricSummary, NamedDataset, RowId, TrainedModel};
use super::plan::NoiseSpec;
use super::{ExperimentError, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub id: RowId,
    pub sigma: f64,
    pub mode: NoiseMode,
    pub normalized: EvalReport,
    pub celsius: EvalReport,
}

/// Seed mean of one curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAggregate {
    pub id: RowId,
    pub sigma: f64,
    pub mode: NoiseMode,
    pub seeds: usize,
    pub normalized_mean: MetricSummary,
    pub celsius_mean: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub points: Vec<NoisePoint>,
    pub aggregates: Vec<NoiseAggregate>,
}

/// Evaluates already trained models on noisy copies of their test split.
/// Every sigma uses its own noise stream, shared by both modes and all
/// models.
pub fn run_noise_sweep(
    spec: &NoiseSpec,
    models: &[TrainedModel],
    datasets: &[NamedDataset],
    options: &RunOptions,
) -> Result<NoiseSweep, ExperimentError> {
    spec.validate()?;
    for m in models {
        if !datasets.iter().any(|d| d.name == m.id.dataset) {
            return Err(ExperimentError::MissingModel(m.id.dataset.clone()));
        }
    }
    let pool = options.pool()?;
    let mut points = Vec::new();
    for ds in datasets {
        let members: Vec<&TrainedModel> = models.iter().filter(|m| m.id.dataset == ds.name).collect();
        if members.is_empty() {
            continue;
        }
        for &mode in &spec.modes {
            for (i, &sigma) in spec.sigmas.iter().enumerate() {
                if options.cancelled() {
                    return Err(ExperimentError::Interrupted);
                }
                let noisy = ds.clean.inject_noise(sigma, mode, rng::derive_seed(spec.seed, i as u64))?;
                let batch: Vec<Result<NoisePoint, ExperimentError>> = pool.install(|| {
                    members
                        .par_iter()
                        .map(|m| {
                            let pred = evaluate(&m.predictor, &noisy, Split::Test)?;
                            let (normalized, celsius) = score(&m.id.model, &pred, &noisy, Split::Test, m.train_seconds)?;
                            Ok(NoisePoint {
                                id: m.id.clone(),
                                sigma,
                                mode,
                                normalized,
                                celsius,
                            })
                        })
                        .collect()
                });
                for p in batch {
                    points.push(p?);
                }
            }
        }
    }
    let aggregates = aggregate(&points);
    Ok(NoiseSweep { points, aggregates })
}

fn aggregate(points: &[NoisePoint]) -> Vec<NoiseAggregate> {
    let mut out: Vec<(NoiseAggregate, Vec<MetricSummary>, Vec<MetricSummary>)> = Vec::new();
    for p in points {
        let id = RowId {
            seed: None,
            ..p.id.clone()
        };
        let pos = out
            .iter()
            .position(|(a, _, _)| a.id == id && a.sigma == p.sigma && a.mode == p.mode);
        let idx = match pos {
            Some(i) => i,
            None => {
                out.push((
                    NoiseAggregate {
                        id,
                        sigma: p.sigma,
                        mode: p.mode,
                        seeds: 0,
                        normalized_mean: MetricSummary::default(),
                        celsius_mean: MetricSummary::default(),
                    },
                    Vec::new(),
                    Vec::new(),
                ));
                out.len() - 1
            }
        };
        out[idx].1.push(MetricSummary::of(&p.normalized));
        out[idx].2.push(MetricSummary::of(&p.celsius));
    }
    out.into_iter()
        .map(|(mut agg, n, c)| {
            agg.seeds = n.len();
            agg.normalized_mean = MetricSummary::mean_std(&n).0;
            agg.celsius_mean = MetricSummary::mean_std(&c).0;
            agg
        })
        .collect()
}
