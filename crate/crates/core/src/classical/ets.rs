//! Exponential smoothing: simple (level only) and Holt linear trend.
//!
//! ```text
//! l_t = a y_t + (1 - a)(l_{t-1} + b_{t-1})
//! b_t = g (l_t - l_{t-1}) + (1 - g) b_{t-1}
//! y_{T+h} = l_T + h b_T
//! ```
//! initialised with `l_0 = y_0`, `b_0 = y_1 - y_0` (Holt) or `b = 0` (simple).

use serde::{Deserialize, Serialize};

use super::ClassicalError;

pub const MIN_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtsVariant {
    Simple,
    Holt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    Fixed {
        level: f64,
        trend: f64,
    },
    /// Grid `{0.1, ..., 1.0}` for both constants, minimizing one-step SSE.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsModel {
    pub variant: EtsVariant,
    pub level_smoothing: f64,
    pub trend_smoothing: f64,
    pub level: f64,
    pub trend: f64,
    pub train_sse: f64,
    pub train_len: usize,
    pub fit_seconds: f64,
}

/// Runs the recursions and returns `(level, trend, one-step SSE)`.
pub(crate) fn run(series: &[f64], variant: EtsVariant, a: f64, g: f64) -> (f64, f64, f64) {
    let mut level = series[0];
    let mut trend = match variant {
        EtsVariant::Holt => series[1] - series[0],
        EtsVariant::Simple => 0.0,
    };
    let mut sse = 0.0;
    for &y in &series[1..] {
        let pred = level + trend;
        sse += (y - pred) * (y - pred);
        let new_level = a * y + (1.0 - a) * pred;
        if variant == EtsVariant::Holt {
            trend = g * (new_level - level) + (1.0 - g) * trend;
        }
        level = new_level;
    }
    (level, trend, sse)
}

pub fn grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn fit_ets(series: &[f64], variant: EtsVariant, smoothing: Smoothing) -> Result<EtsModel, ClassicalError> {
    if series.len() < MIN_LEN {
        return Err(ClassicalError::TooShort {
            model: "ETS",
            need: MIN_LEN - 1,
            got: series.len(),
        });
    }
    let (a, g) = match smoothing {
        Smoothing::Fixed { level, trend } => (level, trend),
        Smoothing::Auto => {
            let trend_grid = match variant {
                EtsVariant::Holt => grid(),
                EtsVariant::Simple => vec![0.0],
            };
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for &a in &grid() {
                for &g in &trend_grid {
                    let (_, _, sse) = run(series, variant, a, g);
                    if sse < best.0 {
                        best = (sse, a, g);
                    }
                }
            }
            (best.1, best.2)
        }
    };
    let (level, trend, sse) = run(series, variant, a, g);
    Ok(EtsModel {
        variant,
        level_smoothing: a,
        trend_smoothing: g,
        level,
        trend,
        train_sse: sse,
        train_len: series.len(),
        fit_seconds: 0.0,
    })
}

impl EtsModel {
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        (1..=h).map(|k| self.level + k as f64 * self.trend).collect()
    }
}
