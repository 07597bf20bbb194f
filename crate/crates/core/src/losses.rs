//! Supervised and prior-informed training losses on the tape.
//!
//! With `L_data = mse(pred, y)` and `L_pi = mse(pred, y_pi)`:
//!
//! ```text
//! fixed:        (1 - lambda) L_data + lambda L_pi
//! uncertainty:  L_data / (2 s_d^2) + L_pi / (2 s_p^2) + log s_d + log s_p
//! rba:          mean_i [ w_d(i) (pred_i - y_i)^2 + w_p(i) (pred_i - y_pi,i)^2 ]
//!               w_d(i) = l_d(i) / (l_d(i) + l_p(i)),  l <- (1 - eta) l + eta |r|
//! ```
//!
//! The uncertainty scales are stored as logarithms. RBA weights enter the
//! tape as constants.

use pif_autodiff::{AdError, Shape, Tape, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RBA_ETA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,

    #[error("prediction has {pred} entries, {what} has {other}")]
    Length { pred: usize, what: &'static str, other: usize },

    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),

    #[error("eta must lie in (0, 1], got {0}")]
    Eta(f64),

    #[error("sample id {id} out of range for {len} samples")]
    SampleId { id: usize, len: usize },

    #[error(transparent)]
    Autodiff(#[from] AdError),
}

/// Loss block of an experiment file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    DataOnly,
    Fixed {
        /// `None` selects lambda on the validation grid.
        #[serde(default)]
        lambda: Option<f64>,
    },
    Uncertainty,
    Rba {
        #[serde(default = "default_eta")]
        eta: f64,
    },
}

fn default_eta() -> f64 {
    DEFAULT_RBA_ETA
}

impl LossConfig {
    pub fn label(&self) -> &'static str {
        match self {
            LossConfig::DataOnly => "data_only",
            LossConfig::Fixed { .. } => "fixed",
            LossConfig::Uncertainty => "uncertainty",
            LossConfig::Rba { .. } => "rba",
        }
    }

    pub fn uses_prior(&self) -> bool {
        !matches!(self, LossConfig::DataOnly)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        match *self {
            LossConfig::Fixed { lambda: Some(l) } => FixedWeight::new(l).map(|_| ()),
            LossConfig::Rba { eta } => check_eta(eta),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedWeight {
    lambda: f64,
}

impl FixedWeight {
    pub fn new(lambda: f64) -> Result<Self, LossError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(LossError::Lambda(lambda));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Learnable task scales, stored as `log sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub log_sigma_data: f64,
    pub log_sigma_pi: f64,
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        Self {
            log_sigma_data: 0.0,
            log_sigma_pi: 0.0,
        }
    }
}

impl UncertaintyParams {
    pub fn sigma_data(&self) -> f64 {
        self.log_sigma_data.exp()
    }

    pub fn sigma_pi(&self) -> f64 {
        self.log_sigma_pi.exp()
    }

    /// Binds both log-scales as differentiable scalars.
    pub fn bind(&self, tape: &mut Tape) -> Result<(Value, Value), LossError> {
        Ok((tape.param_scalar(self.log_sigma_data)?, tape.param_scalar(self.log_sigma_pi)?))
    }
}

fn check_len(pred: Value, what: &'static str, n: usize) -> Result<usize, LossError> {
    let len = pred.shape().len();
    if len == 0 || n == 0 {
        return Err(LossError::EmptyBatch);
    }
    if len != n {
        return Err(LossError::Length { pred: len, what, other: n });
    }
    Ok(len)
}

fn constant_like(tape: &mut Tape, pred: Value, values: &[f64]) -> Result<Value, LossError> {
    Ok(tape.constant(pred.shape(), values.to_vec())?)
}

/// `(1/N) sum (pred - target)^2`.
pub fn mse(tape: &mut Tape, pred: Value, target: &[f64]) -> Result<Value, LossError> {
    check_len(pred, "target", target.len())?;
    let t = constant_like(tape, pred, target)?;
    let d = tape.sub(pred, t)?;
    let sq = tape.square(d)?;
    Ok(tape.mean(sq)?)
}

pub fn fixed_loss(tape: &mut Tape, pred: Value, y_true: &[f64], y_pi: &[f64], fw: FixedWeight) -> Result<Value, LossError> {
    check_len(pred, "prior", y_pi.len())?;
    let data = mse(tape, pred, y_true)?;
    let prior = mse(tape, pred, y_pi)?;
    let a = tape.scale(data, 1.0 - fw.lambda)?;
    let b = tape.scale(prior, fw.lambda)?;
    Ok(tape.add(a, b)?)
}

/// Combines already computed task losses with bound log-scales.
pub fn uncertainty_combine(
    tape: &mut Tape,
    data: Value,
    prior: Value,
    log_sigma_data: Value,
    log_sigma_pi: Value,
) -> Result<Value, LossError> {
    let term = |tape: &mut Tape, loss: Value, log_sigma: Value| -> Result<Value, LossError> {
        // L / (2 sigma^2) = 0.5 L exp(-2 log sigma)
        let m2 = tape.scale(log_sigma, -2.0)?;
        let inv_var = tape.exp(m2)?;
        let weighted = tape.mul(loss, inv_var)?;
        let half = tape.scale(weighted, 0.5)?;
        Ok(tape.add(half, log_sigma)?)
    };
    let a = term(tape, data, log_sigma_data)?;
    let b = term(tape, prior, log_sigma_pi)?;
    Ok(tape.add(a, b)?)
}

pub fn uncertainty_loss(
    tape: &mut Tape,
    pred: Value,
    y_true: &[f64],
    y_pi: &[f64],
    log_sigma_data: Value,
    log_sigma_pi: Value,
) -> Result<Value, LossError> {
    let data = mse(tape, pred, y_true)?;
    let prior = mse(tape, pred, y_pi)?;
    uncertainty_combine(tape, data, prior, log_sigma_data, log_sigma_pi)
}

fn check_eta(eta: f64) -> Result<(), LossError> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(LossError::Eta(eta))
    }
}

/// Per-sample moving averages of absolute residuals, indexed by training
/// sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbaState {
    lambda_data: Vec<f64>,
    lambda_pi: Vec<f64>,
    eta: f64,
}

impl RbaState {
    /// All weights start at zero.
    pub fn new(samples: usize, eta: f64) -> Result<Self, LossError> {
        check_eta(eta)?;
        Ok(Self {
            lambda_data: vec![0.0; samples],
            lambda_pi: vec![0.0; samples],
            eta,
        })
    }

    pub fn from_values(lambda_data: Vec<f64>, lambda_pi: Vec<f64>, eta: f64) -> Result<Self, LossError> {
        check_eta(eta)?;
        if lambda_data.len() != lambda_pi.len() {
            return Err(LossError::Length {
                pred: lambda_data.len(),
                what: "lambda_pi",
                other: lambda_pi.len(),
            });
        }
        Ok(Self {
            lambda_data,
            lambda_pi,
            eta,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda_data(&self) -> &[f64] {
        &self.lambda_data
    }

    pub fn lambda_pi(&self) -> &[f64] {
        &self.lambda_pi
    }

    pub fn len(&self) -> usize {
        self.lambda_data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_data.is_empty()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), LossError> {
        match ids.iter().find(|&&i| i >= self.len()) {
            Some(&id) => Err(LossError::SampleId { id, len: self.len() }),
            None => Ok(()),
        }
    }

    /// EMA step on detached residuals.
    pub fn update(&mut self, ids: &[usize], pred: &[f64], y_true: &[f64], y_pi: &[f64]) -> Result<(), LossError> {
        self.check_ids(ids)?;
        for (what, n) in [("pred", pred.len()), ("target", y_true.len()), ("prior", y_pi.len())] {
            if n != ids.len() {
                return Err(LossError::Length {
                    pred: ids.len(),
                    what,
                    other: n,
                });
            }
        }
        let eta = self.eta;
        for (k, &i) in ids.iter().enumerate() {
            self.lambda_data[i] = (1.0 - eta) * self.lambda_data[i] + eta * (pred[k] - y_true[k]).abs();
            self.lambda_pi[i] = (1.0 - eta) * self.lambda_pi[i] + eta * (pred[k] - y_pi[k]).abs();
        }
        Ok(())
    }

    /// Normalized `(w_data, w_pi)` per id; `(0.5, 0.5)` where both averages
    /// are zero.
    pub fn weights(&self, ids: &[usize]) -> Result<(Vec<f64>, Vec<f64>), LossError> {
        self.check_ids(ids)?;
        let mut wd = Vec::with_capacity(ids.len());
        let mut wp = Vec::with_capacity(ids.len());
        for &i in ids {
            let total = self.lambda_data[i] + self.lambda_pi[i];
            if total > 0.0 {
                let d = self.lambda_data[i] / total;
                wd.push(d);
                wp.push(1.0 - d);
            } else {
                wd.push(0.5);
                wp.push(0.5);
            }
        }
        Ok((wd, wp))
    }
}

pub fn rba_update(state: &mut RbaState, ids: &[usize], pred: &[f64], y_true: &[f64], y_pi: &[f64]) -> Result<(), LossError> {
    state.update(ids, pred, y_true, y_pi)
}

pub fn rba_loss(tape: &mut Tape, state: &RbaState, ids: &[usize], pred: Value, y_true: &[f64], y_pi: &[f64]) -> Result<Value, LossError> {
    let n = check_len(pred, "sample ids", ids.len())?;
    check_len(pred, "target", y_true.len())?;
    check_len(pred, "prior", y_pi.len())?;
    let (wd, wp) = state.weights(ids)?;
    let shape = Shape::Vector(n);
    let pred = tape.reshape(pred, shape)?;
    let term = |tape: &mut Tape, target: &[f64], w: Vec<f64>| -> Result<Value, LossError> {
        let t = tape.constant(shape, target.to_vec())?;
        let d = tape.sub(pred, t)?;
        let sq = tape.square(d)?;
        let w = tape.constant(shape, w)?;
        Ok(tape.mul(w, sq)?)
    };
    let a = term(tape, y_true, wd)?;
    let b = term(tape, y_pi, wp)?;
    let both = tape.add(a, b)?;
    Ok(tape.mean(both)?)
}
