//! Local linear trend model with a scalar observation.
//!
//! ```text
//! x_t = [level, slope],  x_{t+1} = F x_t + w,  F = [[1, 1], [0, 1]],  w ~ N(0, q I)
//! y_t = level_t + v,  v ~ N(0, r)
//! ```
//! The filter starts from `m0 = [y_0, 0]`, `P0 = I`. `q` and `r` are chosen on
//! a log grid by the one-step Gaussian log-likelihood of the training data.

use serde::{Deserialize, Serialize};

use super::ClassicalError;

pub const MIN_LEN: usize = 10;
pub const KALMAN_VARIANCE_GRID: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanModel {
    pub process_variance: f64,
    pub observation_variance: f64,
    /// Filtered state after the last training observation.
    pub state: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub log_likelihood: f64,
    pub train_len: usize,
    pub fit_seconds: f64,
}

/// Filtered state after one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStep {
    pub state: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub innovation: f64,
    pub innovation_variance: f64,
}

/// Runs the filter over `series`, returning every filtered step and the
/// total log-likelihood.
pub fn filter(series: &[f64], q: f64, r: f64) -> (Vec<KalmanStep>, f64) {
    let mut m = [series[0], 0.0];
    let mut p = [[1.0, 0.0], [0.0, 1.0]];
    let mut ll = 0.0;
    let mut steps = Vec::with_capacity(series.len());
    for (t, &y) in series.iter().enumerate() {
        if t > 0 {
            m = [m[0] + m[1], m[1]];
            // F P F^T + Q
            let p00 = p[0][0] + p[0][1] + p[1][0] + p[1][1] + q;
            let p01 = p[0][1] + p[1][1];
            let p10 = p[1][0] + p[1][1];
            let p11 = p[1][1] + q;
            p = [[p00, p01], [p10, p11]];
        }
        let v = y - m[0];
        let s = p[0][0] + r;
        let k = [p[0][0] / s, p[1][0] / s];
        m = [m[0] + k[0] * v, m[1] + k[1] * v];
        // P - K H P, H = [1, 0]
        p = [
            [p[0][0] - k[0] * p[0][0], p[0][1] - k[0] * p[0][1]],
            [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
        ];
        ll -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + v * v / s);
        steps.push(KalmanStep {
            state: m,
            covariance: p,
            innovation: v,
            innovation_variance: s,
        });
    }
    (steps, ll)
}

pub fn fit_kalman(series: &[f64]) -> Result<KalmanModel, ClassicalError> {
    if series.len() < MIN_LEN {
        return Err(ClassicalError::TooShort {
            model: "Kalman",
            need: MIN_LEN - 1,
            got: series.len(),
        });
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &q in &KALMAN_VARIANCE_GRID {
        for &r in &KALMAN_VARIANCE_GRID {
            let (_, ll) = filter(series, q, r);
            if ll.is_finite() && best.is_none_or(|b| ll > b.0) {
                best = Some((ll, q, r));
            }
        }
    }
    let (_, q, r) = best.unwrap_or((0.0, 1e-2, 1e-2));
    Ok(KalmanModel::with_variances(series, q, r))
}

impl KalmanModel {
    /// Filters `series` with fixed variances. Needs a non-empty series.
    pub fn with_variances(series: &[f64], q: f64, r: f64) -> Self {
        let (steps, ll) = filter(series, q, r);
        let last = steps.last().expect("non-empty series");
        Self {
            process_variance: q,
            observation_variance: r,
            state: last.state,
            covariance: last.covariance,
            log_likelihood: ll,
            train_len: series.len(),
            fit_seconds: 0.0,
        }
    }

    pub fn forecast(&self, h: usize) -> Vec<f64> {
        (1..=h).map(|k| self.state[0] + k as f64 * self.state[1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_converges_on_noiseless_line() {
        let y: Vec<f64> = (0..60).map(|k| 0.04 * k as f64 - 0.5).collect();
        let (steps, _) = filter(&y, 1e-6, 1e-6);
        assert!((steps[50].state[1] - 0.04).abs() < 1e-4, "{:?}", steps[50].state);
        let m = fit_kalman(&y).unwrap();
        let f = m.forecast(5);
        assert!((f[4] - (0.04 * 64.0 - 0.5)).abs() < 1e-3);
    }

    #[test]
    fn huge_observation_variance_ignores_data() {
        let y: Vec<f64> = (0..40).map(|k| (k as f64 * 0.3).sin() + 0.1 * k as f64).collect();
        let m = KalmanModel::with_variances(&y, 1e-6, 1e12);
        for v in m.forecast(10) {
            assert!((v - y[0]).abs() < 1e-6, "{v} vs {}", y[0]);
        }
    }

    #[test]
    fn too_short() {
        assert!(fit_kalman(&[1.0; 5]).is_err());
    }
}
