//! AR(p) on a d-times differenced series, fitted by least squares with an
//! intercept. Forecasts iterate one-step predictions and integrate back.

use serde::{Deserialize, Serialize};

use super::{least_squares, ClassicalError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub p: usize,
    pub d: usize,
    /// Lag coefficients, most recent lag first.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// The normal equations were singular and a ridge term was added.
    pub regularized: bool,
    /// Last `p` values of the differenced series, oldest first.
    pub history: Vec<f64>,
    /// Last value at each differencing level `0..d`.
    pub level_tails: Vec<f64>,
    pub train_len: usize,
    pub fit_seconds: f64,
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn fit_ar(series: &[f64], p: usize, d: usize) -> Result<ArModel, ClassicalError> {
    let need = p + d + 2;
    if series.len() <= need || p == 0 {
        return Err(ClassicalError::TooShort {
            model: "ARIMA",
            need,
            got: series.len(),
        });
    }
    let mut levels = vec![series.to_vec()];
    for _ in 0..d {
        let next = difference(levels.last().unwrap());
        levels.push(next);
    }
    let z = levels.last().unwrap();
    let rows: Vec<Vec<f64>> = (p..z.len())
        .map(|t| {
            let mut r: Vec<f64> = (1..=p).map(|lag| z[t - lag]).collect();
            r.push(1.0);
            r
        })
        .collect();
    let targets: Vec<f64> = z[p..].to_vec();
    let (beta, regularized) = least_squares(&rows, &targets);
    Ok(ArModel {
        p,
        d,
        coefficients: beta[..p].to_vec(),
        intercept: beta[p],
        regularized,
        history: z[z.len() - p..].to_vec(),
        level_tails: levels[..d].iter().map(|l| *l.last().unwrap()).collect(),
        train_len: series.len(),
        fit_seconds: 0.0,
    })
}

impl ArModel {
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        let mut hist = self.history.clone();
        let mut tails = self.level_tails.clone();
        let mut out = Vec::with_capacity(h);
        for _ in 0..h {
            let n = hist.len();
            let mut z = self.intercept;
            for (lag, c) in self.coefficients.iter().enumerate() {
                z += c * hist[n - 1 - lag];
            }
            hist.push(z);
            // integrate from the deepest differencing level up
            let mut v = z;
            for level in (0..self.d).rev() {
                v += tails[level];
                tails[level] = v;
            }
            out.push(v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_forecasts_the_constant() {
        let m = fit_ar(&[2.5; 50], 3, 0).unwrap();
        for v in m.forecast(20) {
            assert!((v - 2.5).abs() < 1e-6, "{v}");
        }
        assert!(m.regularized);
    }

    #[test]
    fn recovers_ar1_coefficient() {
        // closed-form least squares for AR(1) with intercept on a noiseless series
        let mut y = vec![1.0];
        for k in 1..500 {
            y.push(0.9 * y[k - 1]);
        }
        let m = fit_ar(&y, 1, 0).unwrap();
        assert!((m.coefficients[0] - 0.9).abs() < 1e-6, "{:?}", m.coefficients);
        assert!(m.intercept.abs() < 1e-6);
    }

    #[test]
    fn differenced_trend_continues() {
        let y: Vec<f64> = (0..100).map(|k| 0.3 * k as f64 - 2.0).collect();
        let m = fit_ar(&y, 1, 1).unwrap();
        let f = m.forecast(10);
        let last = *y.last().unwrap();
        for (h, v) in f.iter().enumerate() {
            let expected = last + 0.3 * (h + 1) as f64;
            assert!((v - expected).abs() < 1e-6 * (h + 1) as f64, "h={h} {v} vs {expected}");
        }
    }

    #[test]
    fn too_short() {
        assert!(fit_ar(&[1.0, 2.0, 3.0, 4.0], 2, 1).is_err());
    }
}
