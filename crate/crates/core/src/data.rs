//! Series ingestion, synthesis, chronological splitting, normalization,
//! lookback windowing and evaluation-time noise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recipe::{parse_recipe, reference_recipe, secondary_recipe, Recipe, RecipeError, RecipeFile};
use crate::rng;

const CSV_HEADER: [&str; 2] = ["time_s", "temperature_c"];
const STEP_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },

    #[error("expected header \"time_s,temperature_c\", found \"{0}\"")]
    Header(String),

    #[error("time must be strictly increasing (index {index}: {prev} then {next})")]
    NonMonotoneTime { index: usize, prev: f64, next: f64 },

    #[error("non-uniform step at index {index}: {step} s vs {expected} s")]
    NonUniformStep { index: usize, step: f64, expected: f64 },

    #[error("series needs at least 2 points with equal-length columns (times {times}, temps {temps})")]
    Length { times: usize, temps: usize },

    #[error("series of length {len} is too short for lookback {lookback} (need more than {need})")]
    TooShort { len: usize, lookback: usize, need: usize },

    #[error("invalid synthetic config: {0}")]
    Config(String),

    #[error("invalid noise sigma {0}")]
    Sigma(f64),

    #[error(transparent)]
    Recipe(#[from] RecipeError),

    #[error("csv: {0}")]
    Csv(#[from] csv_error::CsvError),

    #[error("config file: {0}")]
    Json(#[from] serde_json::Error),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

mod csv_error {
    /// Thin wrapper keeping the csv crate out of the public error type.
    #[derive(Debug, thiserror::Error)]
    #[error("{0}")]
    pub struct CsvError(pub String);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesSource {
    Csv,
    Synthetic,
}

/// Uniformly sampled temperature series.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    times: Vec<f64>,
    temps: Vec<f64>,
    source: SeriesSource,
}

impl RawSeries {
    pub fn new(times: Vec<f64>, temps: Vec<f64>, source: SeriesSource) -> Result<Self, DataError> {
        if times.len() != temps.len() || times.len() < 2 {
            return Err(DataError::Length {
                times: times.len(),
                temps: temps.len(),
            });
        }
        let expected = times[1] - times[0];
        for i in 1..times.len() {
            let step = times[i] - times[i - 1];
            if step <= 0.0 {
                return Err(DataError::NonMonotoneTime {
                    index: i,
                    prev: times[i - 1],
                    next: times[i],
                });
            }
            if (step - expected).abs() > STEP_RTOL * expected {
                return Err(DataError::NonUniformStep { index: i, step, expected });
            }
        }
        Ok(Self { times, temps, source })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn source(&self) -> SeriesSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries, DataError> {
    parse_csv(&fs::read(path)?)
}

pub fn parse_csv(bytes: &[u8]) -> Result<RawSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let header = rdr.headers().map_err(|e| csv_error::CsvError(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(DataError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut times = Vec::new();
    let mut temps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::MalformedRow {
                line,
                detail: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(DataError::MalformedRow {
                line,
                detail: format!("expected 2 fields, got {}", rec.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, DataError> {
            let v: f64 = s.parse().map_err(|_| DataError::MalformedRow {
                line,
                detail: format!("not a number: {s:?}"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::MalformedRow {
                    line,
                    detail: format!("non-finite value {s:?}"),
                })
            }
        };
        times.push(parse(&rec[0])?);
        temps.push(parse(&rec[1])?);
    }
    RawSeries::new(times, temps, SeriesSource::Csv)
}

pub fn save_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = String::from("time_s,temperature_c\n");
    for (t, y) in series.times.iter().zip(&series.temps) {
        out.push_str(&format!("{t},{y}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parameters of the synthetic plant: the recipe prior passed through a
/// discrete first-order lag, plus white measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub recipe: Recipe,
    pub step: f64,
    pub lag_tau: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Names accepted in place of a recipe path for the two built-in recipes.
pub const BUILTIN_PRIMARY: &str = "builtin:primary";
pub const BUILTIN_SECONDARY: &str = "builtin:secondary";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecipeSpec {
    Inline(RecipeFile),
    Path(String),
}

impl RecipeSpec {
    pub fn resolve(&self, base: Option<&Path>) -> Result<Recipe, RecipeError> {
        match self {
            RecipeSpec::Inline(f) => f.clone().into_recipe(),
            RecipeSpec::Path(p) if p == BUILTIN_PRIMARY => Ok(reference_recipe()),
            RecipeSpec::Path(p) if p == BUILTIN_SECONDARY => Ok(secondary_recipe()),
            RecipeSpec::Path(p) => {
                let path = match base {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => p.into(),
                };
                parse_recipe(&fs::read_to_string(path)?)
            }
        }
    }
}

/// JSON form of [`SyntheticConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfigFile {
    pub recipe: RecipeSpec,
    pub step_s: f64,
    pub lag_tau_s: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfigFile {
    pub fn resolve(&self, base: Option<&Path>) -> Result<SyntheticConfig, DataError> {
        Ok(SyntheticConfig {
            recipe: self.recipe.resolve(base)?,
            step: self.step_s,
            lag_tau: self.lag_tau_s,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        })
    }
}

/// Noise-free lagged response to the prior on the sample grid.
pub fn lagged_prior(recipe: &Recipe, step: f64, lag_tau: f64) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    let n = ((recipe.end() - recipe.start()) / step).floor() as usize + 1;
    let times: Vec<f64> = (0..n).map(|k| recipe.start() + k as f64 * step).collect();
    let prior = recipe.sample(&times)?.values;
    if lag_tau == 0.0 {
        return Ok((times, prior));
    }
    let gain = step / lag_tau;
    let mut state = Vec::with_capacity(n);
    state.push(prior[0]);
    for k in 0..n - 1 {
        let next = state[k] + gain * (prior[k] - state[k]);
        state.push(next);
    }
    Ok((times, state))
}

pub fn synthesize(config: &SyntheticConfig) -> Result<RawSeries, DataError> {
    let span = config.recipe.end() - config.recipe.start();
    if !config.step.is_finite() || config.step <= 0.0 {
        return Err(DataError::Config(format!("step_s must be positive, got {}", config.step)));
    }
    if config.step >= span {
        return Err(DataError::Config(format!(
            "step_s {} must be shorter than the recipe span {span}",
            config.step
        )));
    }
    if config.lag_tau.is_nan() || config.lag_tau < 0.0 {
        return Err(DataError::Config(format!("lag_tau_s must be >= 0, got {}", config.lag_tau)));
    }
    if config.noise_sigma.is_nan() || config.noise_sigma < 0.0 {
        return Err(DataError::Config(format!("noise_sigma must be >= 0, got {}", config.noise_sigma)));
    }
    let (times, mut temps) = lagged_prior(&config.recipe, config.step, config.lag_tau)?;
    if config.noise_sigma > 0.0 {
        let mut g = rng::seeded(config.seed);
        for t in &mut temps {
            *t += rng::gaussian(&mut g, config.noise_sigma);
        }
    }
    RawSeries::new(times, temps, SeriesSource::Synthetic)
}

/// Affine map between degrees Celsius and the normalized range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: f64,
    pub scale: f64,
}

impl Normalization {
    /// Maps `min..max` onto `[-1, 1]`; a constant sample gets `shift = mean,
    /// scale = 1`.
    pub fn fit(values: &[f64]) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            Self {
                shift: (hi + lo) / 2.0,
                scale: (hi - lo) / 2.0,
            }
        } else {
            Self {
                shift: values.iter().sum::<f64>() / values.len() as f64,
                scale: 1.0,
            }
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    InputOnly,
    SystemWide,
}

impl NoiseMode {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseMode::InputOnly => "input_only",
            NoiseMode::SystemWide => "system_wide",
        }
    }
}

/// One lookback sample. All values are normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<f64>,
    pub target: f64,
    /// Target before any injected noise.
    pub clean_target: f64,
    /// Prior at the target time, when a recipe is attached.
    pub prior: Option<f64>,
    pub time: f64,
    /// Index of the target in the raw series.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub sigma: f64,
    pub mode: Option<NoiseMode>,
    pub seed: u64,
    pub training: bool,
}

/// Windowed, split and normalized series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    raw: RawSeries,
    lookback: usize,
    train_end: usize,
    val_end: usize,
    norm: Normalization,
    normalized: Vec<f64>,
    windows: Vec<Window>,
    noise: Vec<NoiseRecord>,
}

pub fn prepare(raw: RawSeries, lookback: usize) -> Result<SeriesDataset, DataError> {
    SeriesDataset::prepare(raw, lookback)
}

impl SeriesDataset {
    /// Stride-1 windows, split 60/20/20 by window count, normalized on the
    /// span covered by training windows only.
    pub fn prepare(raw: RawSeries, lookback: usize) -> Result<Self, DataError> {
        let need = lookback + 5;
        if lookback == 0 || raw.len() <= need {
            return Err(DataError::TooShort {
                len: raw.len(),
                lookback,
                need,
            });
        }
        let n = raw.len() - lookback;
        let train_end = n * 6 / 10;
        let val_end = train_end + n * 2 / 10;
        let norm = Normalization::fit(&raw.temps[..train_end + lookback]);
        let normalized: Vec<f64> = raw.temps.iter().map(|&x| norm.normalize(x)).collect();
        let windows = (0..n)
            .map(|k| Window {
                input: normalized[k..k + lookback].to_vec(),
                target: normalized[k + lookback],
                clean_target: normalized[k + lookback],
                prior: None,
                time: raw.times[k + lookback],
                index: k + lookback,
            })
            .collect();
        Ok(Self {
            raw,
            lookback,
            train_end,
            val_end,
            norm,
            normalized,
            windows,
            noise: Vec::new(),
        })
    }

    /// Attaches the normalized recipe prior at each window's target time.
    pub fn with_prior(mut self, recipe: &Recipe) -> Result<Self, DataError> {
        for w in &mut self.windows {
            w.prior = Some(self.norm.normalize(recipe.evaluate(w.time)?));
        }
        Ok(self)
    }

    /// Replaces the prior with an explicit normalized series (one entry per
    /// raw sample).
    pub fn with_prior_values(mut self, prior: &[f64]) -> Self {
        for w in &mut self.windows {
            w.prior = Some(prior[w.index]);
        }
        self
    }

    pub fn has_prior(&self) -> bool {
        self.windows.iter().all(|w| w.prior.is_some())
    }

    pub fn raw(&self) -> &RawSeries {
        &self.raw
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn norm(&self) -> Normalization {
        self.norm
    }

    /// `(train_end, val_end)` as window counts.
    pub fn split_indices(&self) -> (usize, usize) {
        (self.train_end, self.val_end)
    }

    pub fn normalized_series(&self) -> &[f64] {
        &self.normalized
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn noise_history(&self) -> &[NoiseRecord] {
        &self.noise
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Validation => self.train_end..self.val_end,
            Split::Test => self.val_end..self.windows.len(),
        }
    }

    pub fn split(&self, split: Split) -> &[Window] {
        &self.windows[self.range(split)]
    }

    /// Raw-series index of the first target in `split`.
    pub fn first_target_index(&self, split: Split) -> usize {
        self.range(split).start + self.lookback
    }

    /// Perturbs test windows with N(0, sigma^2) in normalized units. Noise
    /// is drawn once per raw sample so overlapping windows stay consistent.
    pub fn inject_noise(&self, sigma: f64, mode: NoiseMode, seed: u64) -> Result<Self, DataError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(DataError::Sigma(sigma));
        }
        let mut out = self.clone();
        out.noise.push(NoiseRecord {
            sigma,
            mode: Some(mode),
            seed,
            training: false,
        });
        if sigma == 0.0 {
            return Ok(out);
        }
        let first = self.val_end;
        let noisy = self.noisy_series(first, self.normalized.len(), sigma, seed);
        let l = self.lookback;
        for w in &mut out.windows[self.val_end..] {
            let k = w.index - l;
            w.input.copy_from_slice(&noisy[k..k + l]);
            if mode == NoiseMode::SystemWide {
                w.target = noisy[w.index];
            }
        }
        Ok(out)
    }

    /// Perturbs inputs and targets of the training and validation windows,
    /// leaving the test split clean.
    pub fn inject_training_noise(&self, sigma: f64, seed: u64) -> Result<Self, DataError> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(DataError::Sigma(sigma));
        }
        let mut out = self.clone();
        out.noise.push(NoiseRecord {
            sigma,
            mode: None,
            seed,
            training: true,
        });
        if sigma == 0.0 {
            return Ok(out);
        }
        let end = self.val_end + self.lookback;
        let noisy = self.noisy_series(0, end, sigma, seed);
        let l = self.lookback;
        for w in &mut out.windows[..self.val_end] {
            let k = w.index - l;
            w.input.copy_from_slice(&noisy[k..k + l]);
            w.target = noisy[w.index];
        }
        Ok(out)
    }

    fn noisy_series(&self, from: usize, to: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut g = rng::seeded(seed);
        let mut noisy = self.normalized.clone();
        for x in &mut noisy[from..to] {
            *x += rng::gaussian(&mut g, sigma);
        }
        noisy
    }
}
