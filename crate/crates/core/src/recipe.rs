//! Manufacturing recipes and the piecewise-linear trajectory prior.
//!
//! A recipe fixes four temperature setpoints `y0..y3` and seven phase
//! boundaries `t0..t6`. The prior alternates ramps and holds:
//!
//! ```text
//! [t0,t1) ramp y0 -> y1    freezing
//! [t1,t2) hold y1
//! [t2,t3) ramp y1 -> y2    primary drying
//! [t3,t4) hold y2
//! [t4,t5) ramp y2 -> y3    secondary drying
//! [t5,t6] hold y3          (closed on the right)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_SETPOINTS: usize = 4;
pub const N_BOUNDARIES: usize = 7;

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("time {t} s is outside the recipe interval [{start}, {end}] s")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("time at index {index} ({t} s) is outside the recipe interval [{start}, {end}] s")]
    OutOfRangeAt { index: usize, t: f64, start: f64, end: f64 },

    #[error("no sample times given")]
    EmptyTimes,

    #[error("sample times must be nondecreasing (index {0})")]
    UnsortedTimes(usize),

    #[error("missing field `{0}`")]
    MissingField(&'static str),

    #[error("`{field}` must have exactly {expected} entries, got {got}")]
    Cardinality { field: &'static str, expected: usize, got: usize },

    #[error("boundaries must be strictly increasing (t{} = {} is not after t{} = {})", .index, .value, .index - 1, .previous)]
    NonMonotone { index: usize, previous: f64, value: f64 },

    #[error("`{0}` contains a non-finite number")]
    NonFinite(&'static str),

    #[error("unknown time unit `{0}` (expected \"seconds\" or \"hours\")")]
    TimeUnit(String),

    #[error("malformed recipe file: {0}")]
    Schema(#[from] serde_json::Error),

    #[error("recipe file I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Setpoints and phase boundaries of a staged thermal process.
/// Boundaries are held in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    name: String,
    setpoints: [f64; N_SETPOINTS],
    boundaries: [f64; N_BOUNDARIES],
}

impl Recipe {
    pub fn new(name: impl Into<String>, setpoints: [f64; N_SETPOINTS], boundaries: [f64; N_BOUNDARIES]) -> Result<Self, RecipeError> {
        if setpoints.iter().any(|v| !v.is_finite()) {
            return Err(RecipeError::NonFinite("setpoints"));
        }
        if boundaries.iter().any(|v| !v.is_finite()) {
            return Err(RecipeError::NonFinite("boundaries"));
        }
        for k in 1..N_BOUNDARIES {
            if boundaries[k] <= boundaries[k - 1] {
                return Err(RecipeError::NonMonotone {
                    index: k,
                    previous: boundaries[k - 1],
                    value: boundaries[k],
                });
            }
        }
        Ok(Self {
            name: name.into(),
            setpoints,
            boundaries,
        })
    }

    /// Same as [`Recipe::new`] with boundaries given in hours.
    pub fn from_hours(name: impl Into<String>, setpoints: [f64; N_SETPOINTS], hours: [f64; N_BOUNDARIES]) -> Result<Self, RecipeError> {
        Self::new(name, setpoints, hours.map(|h| h * 3600.0))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn setpoints(&self) -> &[f64; N_SETPOINTS] {
        &self.setpoints
    }

    pub fn boundaries(&self) -> &[f64; N_BOUNDARIES] {
        &self.boundaries
    }

    pub fn start(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn end(&self) -> f64 {
        self.boundaries[N_BOUNDARIES - 1]
    }

    pub fn min_setpoint(&self) -> f64 {
        self.setpoints.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_setpoint(&self) -> f64 {
        self.setpoints.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index `k` of the segment `[t_k, t_{k+1})` containing `t`; the final
    /// segment also contains `t6`.
    pub fn segment(&self, t: f64) -> Option<usize> {
        let b = &self.boundaries;
        if !(b[0] <= t && t <= b[N_BOUNDARIES - 1]) {
            return None;
        }
        Some((0..N_BOUNDARIES - 2).find(|&k| t < b[k + 1]).unwrap_or(N_BOUNDARIES - 2))
    }

    /// Prior temperature at time `t` seconds.
    pub fn evaluate(&self, t: f64) -> Result<f64, RecipeError> {
        let k = self.segment(t).ok_or(RecipeError::OutOfRange {
            t,
            start: self.start(),
            end: self.end(),
        })?;
        let (y, b) = (&self.setpoints, &self.boundaries);
        Ok(match k {
            // even segments ramp from y[k/2] to y[k/2+1], odd segments hold
            0 | 2 | 4 => {
                let (ya, yb) = (y[k / 2], y[k / 2 + 1]);
                let frac = (t - b[k]) / (b[k + 1] - b[k]);
                (ya + (yb - ya) * frac).clamp(ya.min(yb), ya.max(yb))
            }
            _ => y[k / 2 + 1],
        })
    }

    /// Evaluates the prior at every time, preserving order and length.
    pub fn sample(&self, times: &[f64]) -> Result<PriorTrajectory, RecipeError> {
        if times.is_empty() {
            return Err(RecipeError::EmptyTimes);
        }
        let mut values = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            if i > 0 && t < times[i - 1] {
                return Err(RecipeError::UnsortedTimes(i));
            }
            values.push(self.evaluate(t).map_err(|_| RecipeError::OutOfRangeAt {
                index: i,
                t,
                start: self.start(),
                end: self.end(),
            })?);
        }
        Ok(PriorTrajectory {
            times: times.to_vec(),
            values,
            recipe_name: self.name.clone(),
        })
    }
}

/// The prior sampled at a set of times.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub recipe_name: String,
}

pub fn evaluate_prior(recipe: &Recipe, t: f64) -> Result<f64, RecipeError> {
    recipe.evaluate(t)
}

pub fn sample_prior(recipe: &Recipe, times: &[f64]) -> Result<PriorTrajectory, RecipeError> {
    recipe.sample(times)
}

/// On-disk form of a recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub time_unit: Option<String>,
    #[serde(default)]
    pub setpoints: Option<Vec<f64>>,
    #[serde(default)]
    pub boundaries: Option<Vec<f64>>,
}

impl RecipeFile {
    pub fn into_recipe(self) -> Result<Recipe, RecipeError> {
        let name = self.name.ok_or(RecipeError::MissingField("name"))?;
        let unit = self.time_unit.ok_or(RecipeError::MissingField("time_unit"))?;
        let setpoints = self.setpoints.ok_or(RecipeError::MissingField("setpoints"))?;
        let boundaries = self.boundaries.ok_or(RecipeError::MissingField("boundaries"))?;
        let factor = match unit.as_str() {
            "seconds" => 1.0,
            "hours" => 3600.0,
            other => return Err(RecipeError::TimeUnit(other.to_string())),
        };
        let setpoints: [f64; N_SETPOINTS] = setpoints.as_slice().try_into().map_err(|_| RecipeError::Cardinality {
            field: "setpoints",
            expected: N_SETPOINTS,
            got: setpoints.len(),
        })?;
        let mut b: [f64; N_BOUNDARIES] = boundaries.as_slice().try_into().map_err(|_| RecipeError::Cardinality {
            field: "boundaries",
            expected: N_BOUNDARIES,
            got: boundaries.len(),
        })?;
        if factor != 1.0 {
            b.iter_mut().for_each(|t| *t *= factor);
        }
        Recipe::new(name, setpoints, b)
    }
}

impl From<&Recipe> for RecipeFile {
    fn from(r: &Recipe) -> Self {
        Self {
            name: Some(r.name.clone()),
            time_unit: Some("seconds".into()),
            setpoints: Some(r.setpoints.to_vec()),
            boundaries: Some(r.boundaries.to_vec()),
        }
    }
}

pub fn parse_recipe(json: &str) -> Result<Recipe, RecipeError> {
    serde_json::from_str::<RecipeFile>(json)?.into_recipe()
}

pub fn load_recipe(path: impl AsRef<Path>) -> Result<Recipe, RecipeError> {
    parse_recipe(&fs::read_to_string(path)?)
}

/// Writes the recipe with boundaries in seconds.
pub fn save_recipe(recipe: &Recipe, path: impl AsRef<Path>) -> Result<(), RecipeError> {
    let json = serde_json::to_string_pretty(&RecipeFile::from(recipe))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// Reference freeze-drying cycle used by the synthetic benchmarks.
pub fn reference_recipe() -> Recipe {
    Recipe::from_hours("primary", [20.0, -40.0, -10.0, 25.0], [0.0, 2.0, 6.0, 8.0, 20.0, 22.0, 30.0]).expect("valid reference recipe")
}

/// Second product: different setpoints and a longer final hold that
/// absorbs the extra drying stage.
pub fn secondary_recipe() -> Recipe {
    Recipe::from_hours("secondary", [15.0, -45.0, -20.0, 30.0], [0.0, 2.5, 7.0, 9.5, 18.0, 21.0, 34.0]).expect("valid secondary recipe")
}
