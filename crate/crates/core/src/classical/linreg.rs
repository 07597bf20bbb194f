use serde::{Deserialize, Serialize};

use super::ClassicalError;

/// Ordinary least squares of the series on its sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegModel {
    pub slope: f64,
    pub intercept: f64,
    pub train_len: usize,
    pub fit_seconds: f64,
}

pub fn fit_linreg(series: &[f64]) -> Result<LinRegModel, ClassicalError> {
    let n = series.len();
    if n < 2 {
        return Err(ClassicalError::TooShort {
            model: "LinReg",
            need: 1,
            got: n,
        });
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = series.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, &y) in series.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    Ok(LinRegModel {
        slope,
        intercept: y_mean - slope * t_mean,
        train_len: n,
        fit_seconds: 0.0,
    })
}

impl LinRegModel {
    pub fn predict(&self, index: usize) -> f64 {
        self.intercept + self.slope * index as f64
    }

    pub fn forecast(&self, h: usize) -> Vec<f64> {
        (1..=h).map(|k| self.predict(self.train_len - 1 + k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_interpolate() {
        let m = fit_linreg(&[1.0, 4.0]).unwrap();
        assert_eq!((m.slope, m.intercept), (3.0, 1.0));
        assert_eq!(m.forecast(1), vec![7.0]);
    }

    #[test]
    fn exact_line() {
        let y: Vec<f64> = (0..50).map(|t| 3.0 * t as f64 + 1.0).collect();
        let m = fit_linreg(&y).unwrap();
        assert!((m.slope - 3.0).abs() < 1e-10 && (m.intercept - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noisy_line_within_three_standard_errors() {
        use rand::SeedableRng;
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let sigma = 2.0;
        let n = 1000;
        let y: Vec<f64> = (0..n)
            .map(|t| -0.02 * t as f64 + 5.0 + crate::rng::gaussian(&mut g, sigma))
            .collect();
        let m = fit_linreg(&y).unwrap();
        let t_mean = (n - 1) as f64 / 2.0;
        let sxx: f64 = (0..n).map(|t| (t as f64 - t_mean).powi(2)).sum();
        let resid: f64 = y.iter().enumerate().map(|(t, v)| (v - m.predict(t)).powi(2)).sum();
        let s2 = resid / (n - 2) as f64;
        let se_slope = (s2 / sxx).sqrt();
        let se_int = (s2 * (1.0 / n as f64 + t_mean * t_mean / sxx)).sqrt();
        assert!((m.slope + 0.02).abs() < 3.0 * se_slope);
        assert!((m.intercept - 5.0).abs() < 3.0 * se_int);
    }
}
