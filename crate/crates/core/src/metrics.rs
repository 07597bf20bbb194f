//! Accuracy and physical-plausibility metrics.
//!
//! Gradients are taken per sample index: central differences in the
//! interior and one-sided first differences at both ends.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    Length { pred: usize, truth: usize },

    #[error("metric needs at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
}

fn check(pred: &[f64], truth: &[f64], need: usize) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::Length {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.len() < need {
        return Err(MetricError::TooShort { need, got: pred.len() });
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth, 1)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn linf_rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max))
}

/// Numerical time-gradient per sample index.
pub fn numerical_gradient(y: &[f64]) -> Vec<f64> {
    let m = y.len();
    let mut g = vec![0.0; m];
    if m < 2 {
        return g;
    }
    g[0] = y[1] - y[0];
    g[m - 1] = y[m - 1] - y[m - 2];
    for j in 1..m - 1 {
        g[j] = (y[j + 1] - y[j - 1]) / 2.0;
    }
    g
}

fn gradient_gaps(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>, MetricError> {
    check(pred, truth, 3)?;
    let (gp, gt) = (numerical_gradient(pred), numerical_gradient(truth));
    Ok(gp.iter().zip(&gt).map(|(a, b)| (a - b).abs()).collect())
}

pub fn gradient_error(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    let gaps = gradient_gaps(pred, truth)?;
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

pub fn linf_grad_error(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    Ok(gradient_gaps(pred, truth)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Same scale as the model inputs; comparable across datasets.
    Normalized,
    Celsius,
}

impl Units {
    pub fn label(&self) -> &'static str {
        match self {
            Units::Normalized => "normalized",
            Units::Celsius => "celsius",
        }
    }
}

/// Metric bundle for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub rmse: f64,
    pub linf_rmse: f64,
    pub gradient_error: f64,
    pub linf_grad_error: f64,
    pub n_points: usize,
    pub train_seconds: f64,
    pub units: Units,
}

impl EvalReport {
    pub fn compute(model: impl Into<String>, pred: &[f64], truth: &[f64], train_seconds: f64, units: Units) -> Result<Self, MetricError> {
        Ok(Self {
            model: model.into(),
            rmse: rmse(pred, truth)?,
            linf_rmse: linf_rmse(pred, truth)?,
            gradient_error: gradient_error(pred, truth)?,
            linf_grad_error: linf_grad_error(pred, truth)?,
            n_points: pred.len(),
            train_seconds,
            units,
        })
    }

    pub fn is_finite(&self) -> bool {
        [
            self.rmse,
            self.linf_rmse,
            self.gradient_error,
            self.linf_grad_error,
            self.train_seconds,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
