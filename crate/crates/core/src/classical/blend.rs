//! Convex blend of a forecast with the recipe prior,
//! `(a * forecast + b * prior) / (a + b)`, and the validation search for
//! the weights.

use serde::{Deserialize, Serialize};

use super::ClassicalError;
use crate::metrics::rmse;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl BlendWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ClassicalError> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0) || !(alpha + beta).is_finite() {
            return Err(ClassicalError::Weights { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }
}

pub fn blend(pred: &[f64], prior: &[f64], w: BlendWeights) -> Result<Vec<f64>, ClassicalError> {
    let w = BlendWeights::new(w.alpha, w.beta)?;
    if pred.len() != prior.len() {
        return Err(ClassicalError::Length {
            pred: pred.len(),
            prior: prior.len(),
        });
    }
    let total = w.alpha + w.beta;
    Ok(pred.iter().zip(prior).map(|(p, y)| (w.alpha * p + w.beta * y) / total).collect())
}

/// `alpha` in `{1.0, 0.9, ..., 0.0}` with `beta = 1 - alpha`.
pub fn blend_grid() -> Vec<BlendWeights> {
    (0..=10)
        .rev()
        .map(|i| BlendWeights {
            alpha: i as f64 / 10.0,
            beta: (10 - i) as f64 / 10.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendSearch {
    pub best: BlendWeights,
    pub best_rmse: f64,
    /// Validation RMSE at every grid point, in grid order.
    pub table: Vec<(BlendWeights, f64)>,
}

/// Picks the grid pair with the lowest validation RMSE; ties go to the
/// larger `alpha`.
pub fn search_blend_weights(pred: &[f64], prior: &[f64], truth: &[f64], grid: &[BlendWeights]) -> Result<BlendSearch, ClassicalError> {
    if truth.is_empty() {
        return Err(ClassicalError::EmptyValidation);
    }
    let mut table = Vec::with_capacity(grid.len());
    for &w in grid {
        let blended = blend(pred, prior, w)?;
        let e = rmse(&blended, truth).map_err(|_| ClassicalError::Length {
            pred: blended.len(),
            prior: truth.len(),
        })?;
        table.push((w, e));
    }
    let (best, best_rmse) = table
        .iter()
        .cloned()
        .reduce(|acc, cur| {
            if cur.1 < acc.1 || (cur.1 == acc.1 && cur.0.alpha > acc.0.alpha) {
                cur
            } else {
                acc
            }
        })
        .ok_or(ClassicalError::EmptyValidation)?;
    Ok(BlendSearch { best, best_rmse, table })
}
