//! Classical baselines and the post-hoc blend with the recipe prior.
//!
//! Every model is fitted on a normalized training series indexed from 0 and
//! forecasts from its fitted state only. Sensor readings after the training
//! span never enter a prediction, so input noise cannot move a forecast.

mod ar;
mod blend;
mod ets;
mod kalman;
mod linreg;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ar::{fit_ar, ArModel};
pub use blend::{blend, blend_grid, search_blend_weights, BlendSearch, BlendWeights};
pub use ets::{fit_ets, EtsModel, EtsVariant, Smoothing};
pub use kalman::{filter as kalman_filter, fit_kalman, KalmanModel, KalmanStep, KALMAN_VARIANCE_GRID};
pub use linreg::{fit_linreg, LinRegModel};

#[derive(Debug, Error, PartialEq)]
pub enum ClassicalError {
    #[error("{model} needs more than {need} training points, got {got}")]
    TooShort { model: &'static str, need: usize, got: usize },

    #[error("forecast index {index} lies inside the training span (length {train_len})")]
    InSample { index: usize, train_len: usize },

    #[error("blend inputs differ in length ({pred} vs {prior})")]
    Length { pred: usize, prior: usize },

    #[error("blend weights must be non-negative with a positive sum (alpha={alpha}, beta={beta})")]
    Weights { alpha: f64, beta: f64 },

    #[error("empty validation split")]
    EmptyValidation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassicalKind {
    #[serde(rename = "ARIMA")]
    Ar,
    #[serde(rename = "ETS")]
    Ets,
    #[serde(rename = "Kalman")]
    Kalman,
    #[serde(rename = "LinReg")]
    LinReg,
}

impl ClassicalKind {
    pub const ALL: [ClassicalKind; 4] = [ClassicalKind::Ar, ClassicalKind::Ets, ClassicalKind::Kalman, ClassicalKind::LinReg];

    pub fn label(&self) -> &'static str {
        match self {
            ClassicalKind::Ar => "ARIMA",
            ClassicalKind::Ets => "ETS",
            ClassicalKind::Kalman => "Kalman",
            ClassicalKind::LinReg => "LinReg",
        }
    }

    /// Fits with the module defaults: AR(5) on first differences, Holt with
    /// grid-selected smoothing, grid-selected Kalman variances, OLS.
    pub fn fit_default(&self, series: &[f64]) -> Result<ClassicalModel, ClassicalError> {
        let start = Instant::now();
        let mut model = match self {
            ClassicalKind::Ar => ClassicalModel::Ar(fit_ar(series, 5, 1)?),
            ClassicalKind::Ets => ClassicalModel::Ets(fit_ets(series, EtsVariant::Holt, Smoothing::Auto)?),
            ClassicalKind::Kalman => ClassicalModel::Kalman(fit_kalman(series)?),
            ClassicalKind::LinReg => ClassicalModel::LinReg(fit_linreg(series)?),
        };
        model.set_fit_seconds(start.elapsed().as_secs_f64());
        Ok(model)
    }
}

/// A fitted classical forecaster. Serializes as JSON tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ClassicalModel {
    #[serde(rename = "ARIMA")]
    Ar(ArModel),
    #[serde(rename = "ETS")]
    Ets(EtsModel),
    #[serde(rename = "Kalman")]
    Kalman(KalmanModel),
    #[serde(rename = "LinReg")]
    LinReg(LinRegModel),
}

impl ClassicalModel {
    pub fn kind(&self) -> ClassicalKind {
        match self {
            ClassicalModel::Ar(_) => ClassicalKind::Ar,
            ClassicalModel::Ets(_) => ClassicalKind::Ets,
            ClassicalModel::Kalman(_) => ClassicalKind::Kalman,
            ClassicalModel::LinReg(_) => ClassicalKind::LinReg,
        }
    }

    pub fn train_len(&self) -> usize {
        match self {
            ClassicalModel::Ar(m) => m.train_len,
            ClassicalModel::Ets(m) => m.train_len,
            ClassicalModel::Kalman(m) => m.train_len,
            ClassicalModel::LinReg(m) => m.train_len,
        }
    }

    pub fn fit_seconds(&self) -> f64 {
        match self {
            ClassicalModel::Ar(m) => m.fit_seconds,
            ClassicalModel::Ets(m) => m.fit_seconds,
            ClassicalModel::Kalman(m) => m.fit_seconds,
            ClassicalModel::LinReg(m) => m.fit_seconds,
        }
    }

    fn set_fit_seconds(&mut self, s: f64) {
        match self {
            ClassicalModel::Ar(m) => m.fit_seconds = s,
            ClassicalModel::Ets(m) => m.fit_seconds = s,
            ClassicalModel::Kalman(m) => m.fit_seconds = s,
            ClassicalModel::LinReg(m) => m.fit_seconds = s,
        }
    }

    /// Forecasts for horizons `1..=h` past the end of the training span.
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        match self {
            ClassicalModel::Ar(m) => m.forecast(h),
            ClassicalModel::Ets(m) => m.forecast(h),
            ClassicalModel::Kalman(m) => m.forecast(h),
            ClassicalModel::LinReg(m) => m.forecast(h),
        }
    }

    /// Predictions at absolute series indices, all at or after the end of
    /// the training span.
    pub fn predict_indices(&self, indices: &[usize]) -> Result<Vec<f64>, ClassicalError> {
        let n = self.train_len();
        if let Some(&bad) = indices.iter().find(|&&i| i < n) {
            return Err(ClassicalError::InSample { index: bad, train_len: n });
        }
        let horizon = indices.iter().map(|&i| i + 1 - n).max().unwrap_or(0);
        let path = self.forecast(horizon);
        Ok(indices.iter().map(|&i| path[i - n]).collect())
    }
}

/// Least-squares solve of `X b = y` through the normal equations. Falls back
/// to a `1e-8` ridge when the Gram matrix is numerically singular; the flag
/// reports the fallback.
pub(crate) fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, bool) {
    use nalgebra::{DMatrix, DVector};
    let k = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * yv;
    let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let solved = gram.clone().cholesky().filter(|c| {
        let l = c.l_dirty();
        (0..k).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * max_diag.max(f64::MIN_POSITIVE))
    });
    match solved {
        Some(c) => (c.solve(&rhs).iter().cloned().collect(), false),
        None => {
            let ridged = gram + DMatrix::identity(k, k) * 1e-8;
            let sol = match ridged.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => ridged.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
            };
            (sol.iter().cloned().collect(), true)
        }
    }
}
