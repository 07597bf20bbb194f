use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classical::ClassicalKind;
use crate::data::{load_csv, synthesize, NoiseMode, RawSeries, RecipeSpec, SyntheticConfig};
use crate::losses::LossConfig;
use crate::neural::Family;
use crate::recipe::{Recipe, RecipeFile};
use crate::training::{default_lambda_grid, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};

use super::ExperimentError;

/// Desk-scale lookback; the measured-data setting of 300 steps is
/// available through the plan.
pub const DEFAULT_LOOKBACK: usize = 50;

/// Where a series comes from: a CSV file, or the synthetic plant driven by
/// a recipe. The recipe also supplies the prior for either source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<RecipeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_tau_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetSpec {
    pub fn synthetic(recipe: &Recipe, step_s: f64, lag_tau_s: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            csv: None,
            recipe: Some(RecipeSpec::Inline(RecipeFile::from(recipe))),
            step_s: Some(step_s),
            lag_tau_s: Some(lag_tau_s),
            noise_sigma: Some(noise_sigma),
            seed: Some(seed),
        }
    }

    pub fn from_csv(path: impl Into<String>, recipe: Option<RecipeSpec>) -> Self {
        Self {
            csv: Some(path.into()),
            recipe,
            step_s: None,
            lag_tau_s: None,
            noise_sigma: None,
            seed: None,
        }
    }

    /// Loads or synthesizes the series. `key` prefixes config errors.
    pub fn load(&self, key: &str, base: Option<&Path>) -> Result<(RawSeries, Option<Recipe>), ExperimentError> {
        let recipe = match &self.recipe {
            Some(spec) => Some(
                spec.resolve(base)
                    .map_err(|e| ExperimentError::config(format!("{key}.recipe"), e.to_string()))?,
            ),
            None => None,
        };
        if let Some(csv) = &self.csv {
            for (field, present) in [
                ("step_s", self.step_s.is_some()),
                ("lag_tau_s", self.lag_tau_s.is_some()),
                ("noise_sigma", self.noise_sigma.is_some()),
                ("seed", self.seed.is_some()),
            ] {
                if present {
                    return Err(ExperimentError::config(
                        format!("{key}.{field}"),
                        "only applies to synthetic datasets",
                    ));
                }
            }
            let path = match base {
                Some(b) if Path::new(csv).is_relative() => b.join(csv),
                _ => csv.into(),
            };
            let raw = load_csv(&path).map_err(|e| ExperimentError::config(format!("{key}.csv"), format!("{}: {e}", path.display())))?;
            return Ok((raw, recipe));
        }
        let recipe = recipe.ok_or_else(|| ExperimentError::config(format!("{key}.recipe"), "missing (needed to synthesize a series)"))?;
        let need = |field: &str, v: Option<f64>| v.ok_or_else(|| ExperimentError::config(format!("{key}.{field}"), "missing"));
        let config = SyntheticConfig {
            recipe: recipe.clone(),
            step: need("step_s", self.step_s)?,
            lag_tau: need("lag_tau_s", self.lag_tau_s)?,
            noise_sigma: need("noise_sigma", self.noise_sigma)?,
            seed: self.seed.ok_or_else(|| ExperimentError::config(format!("{key}.seed"), "missing"))?,
        };
        let raw = synthesize(&config).map_err(|e| ExperimentError::config(key, e.to_string()))?;
        Ok((raw, Some(recipe)))
    }
}

/// Any model the benchmark can run, named as in the result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Neural(Family),
    Classical(ClassicalKind),
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Neural(f) => f.label(),
            ModelKind::Classical(k) => k.label(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(f) = Family::parse(s) {
            return Ok(ModelKind::Neural(f));
        }
        ClassicalKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .map(ModelKind::Classical)
            .ok_or_else(|| {
                let known: Vec<&str> = Family::ALL
                    .iter()
                    .map(|f| f.label())
                    .chain(ClassicalKind::ALL.iter().map(|k| k.label()))
                    .collect();
                format!("unknown model `{s}`; expected one of {}", known.join(", "))
            })
    }
}

impl TryFrom<String> for ModelKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> Self {
        m.label().to_string()
    }
}

/// Optimizer settings shared by every cell of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            max_epochs: DEFAULT_MAX_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: None,
            patience: DEFAULT_PATIENCE,
        }
    }
}

impl TrainSettings {
    pub fn config(&self, seed: u64, loss: LossConfig) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: self.patience,
            seed,
            loss,
        }
    }

    fn validate(&self, key: &str) -> Result<(), ExperimentError> {
        self.config(0, LossConfig::DataOnly)
            .validate()
            .map_err(|e| ExperimentError::config(key, e.to_string()))
    }
}

/// Evaluation-time noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_sigma_grid")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<NoiseMode>,
    #[serde(default)]
    pub seed: u64,
}

/// 0.0 to 1.0 in steps of 0.1.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_modes() -> Vec<NoiseMode> {
    vec![NoiseMode::InputOnly, NoiseMode::SystemWide]
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigmas: default_sigma_grid(),
            modes: default_modes(),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.sigmas.is_empty() {
            return Err(ExperimentError::config("noise.sigmas", "must not be empty"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(ExperimentError::config("noise.sigmas", format!("{s} lies outside [0, 1]")));
        }
        if self.modes.is_empty() {
            return Err(ExperimentError::config("noise.modes", "must not be empty"));
        }
        Ok(())
    }
}

fn default_lookback() -> usize {
    DEFAULT_LOOKBACK
}
fn default_losses() -> Vec<LossConfig> {
    vec![LossConfig::DataOnly]
}
fn default_tiers() -> Vec<usize> {
    vec![crate::neural::DESK_TIERS[0]]
}
fn yes() -> bool {
    true
}

/// Family x loss x tier x seed matrix on one or two datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub dataset: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<DatasetSpec>,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossConfig>,
    #[serde(default = "default_tiers")]
    pub tiers: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Perturbs the training and validation splits (normalized sigma);
    /// the test split stays clean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_noise: Option<f64>,
    /// When false every timing cell reads `NA`, which makes outputs
    /// byte-reproducible.
    #[serde(default = "yes")]
    pub record_timing: bool,
}

impl BenchmarkPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.lookback == 0 {
            return Err(ExperimentError::config("lookback", "must be positive"));
        }
        if self.models.is_empty() {
            return Err(ExperimentError::config("models", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::config("seeds", "must not be empty"));
        }
        let neural = self.models.iter().any(|m| matches!(m, ModelKind::Neural(_)));
        if neural && self.losses.is_empty() {
            return Err(ExperimentError::config("losses", "must not be empty"));
        }
        if neural && self.tiers.is_empty() {
            return Err(ExperimentError::config("tiers", "must not be empty"));
        }
        if self.tiers.contains(&0) {
            return Err(ExperimentError::config("tiers", "targets must be positive"));
        }
        for loss in &self.losses {
            loss.validate().map_err(|e| ExperimentError::config("losses", e.to_string()))?;
        }
        if self.losses.iter().any(|l| matches!(l, LossConfig::Fixed { lambda: None })) {
            check_lambda_grid(&self.lambda_grid)?;
        }
        self.train.validate("train")?;
        self.noise.validate()?;
        if let Some(s) = self.training_noise {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(ExperimentError::config("training_noise", format!("{s} is not a valid sigma")));
            }
        }
        Ok(())
    }
}

fn check_lambda_grid(grid: &[f64]) -> Result<(), ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::config("lambda_grid", "must not be empty"));
    }
    if let Some(l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(ExperimentError::config("lambda_grid", format!("{l} lies outside [0, 1]")));
    }
    Ok(())
}

/// One model trained on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub dataset: DatasetSpec,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    pub model: Family,
    pub tier: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "yes")]
    pub record_timing: bool,
}

fn default_loss() -> LossConfig {
    LossConfig::DataOnly
}

impl TrainPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.lookback == 0 {
            return Err(ExperimentError::config("lookback", "must be positive"));
        }
        if self.tier == 0 {
            return Err(ExperimentError::config("tier", "must be positive"));
        }
        self.loss.validate().map_err(|e| ExperimentError::config("loss", e.to_string()))?;
        if matches!(self.loss, LossConfig::Fixed { lambda: None }) {
            check_lambda_grid(&self.lambda_grid)?;
        }
        self.train.validate("train")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStrategy {
    /// Source model applied as is.
    BaselineEval,
    /// Frozen body, fresh affine head trained on the target.
    LinearProbe,
    /// Every parameter trained on the target at a reduced rate.
    FullFinetune,
}

impl TransferStrategy {
    pub const ALL: [TransferStrategy; 3] = [
        TransferStrategy::BaselineEval,
        TransferStrategy::LinearProbe,
        TransferStrategy::FullFinetune,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            TransferStrategy::BaselineEval => "baseline_eval",
            TransferStrategy::LinearProbe => "linear_probe",
            TransferStrategy::FullFinetune => "full_finetune",
        }
    }
}

/// Source model of a transfer study: a checkpoint file, or one model per
/// seed trained in-process.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferSource {
    Checkpoint(String),
    Pretrain(PretrainSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub dataset: DatasetSpec,
    pub model: Family,
    pub tier: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_loss")]
    pub loss: LossConfig,
}

fn default_strategies() -> Vec<TransferStrategy> {
    TransferStrategy::ALL.to_vec()
}
fn default_probe_rate() -> f64 {
    1e-2
}
fn default_finetune_factor() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    pub source: TransferSource,
    pub target: DatasetSpec,
    /// Must agree with the source model when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback: Option<usize>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<TransferStrategy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainSettings,
    /// Learning rate of the head-only fit.
    #[serde(default = "default_probe_rate")]
    pub probe_learning_rate: f64,
    /// Full fine-tuning runs at this fraction of the family rate.
    #[serde(default = "default_finetune_factor")]
    pub finetune_rate_factor: f64,
    #[serde(default = "yes")]
    pub record_timing: bool,
}

impl TransferPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::config("seeds", "must not be empty"));
        }
        if self.strategies.is_empty() {
            return Err(ExperimentError::config("strategies", "must not be empty"));
        }
        if !(self.probe_learning_rate > 0.0 && self.probe_learning_rate.is_finite()) {
            return Err(ExperimentError::config("probe_learning_rate", "must be positive"));
        }
        if !(self.finetune_rate_factor > 0.0 && self.finetune_rate_factor <= 1.0) {
            return Err(ExperimentError::config("finetune_rate_factor", "must lie in (0, 1]"));
        }
        if let TransferSource::Pretrain(p) = &self.source {
            if p.tier == 0 {
                return Err(ExperimentError::config("source.pretrain.tier", "must be positive"));
            }
            if matches!(p.loss, LossConfig::Fixed { lambda: None }) {
                return Err(ExperimentError::config(
                    "source.pretrain.loss",
                    "fixed loss needs an explicit lambda here",
                ));
            }
            p.loss
                .validate()
                .map_err(|e| ExperimentError::config("source.pretrain.loss", e.to_string()))?;
        }
        self.train.validate("train")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_parse_case_insensitively() {
        assert_eq!("ckan".parse::<ModelKind>(), Ok(ModelKind::Neural(Family::Ckan)));
        assert_eq!("arima".parse::<ModelKind>(), Ok(ModelKind::Classical(ClassicalKind::Ar)));
        assert!("GRU".parse::<ModelKind>().is_err());
    }

    #[test]
    fn missing_and_unknown_keys_are_named() {
        let err = serde_json::from_str::<BenchmarkPlan>(r#"{"dataset": {}, "models": ["MLP"]}"#).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
        let err = serde_json::from_str::<BenchmarkPlan>(r#"{"dataset": {}, "models": [], "seeds": [1], "sedes": 2}"#).unwrap_err();
        assert!(err.to_string().contains("sedes"), "{err}");
    }

    #[test]
    fn synthetic_spec_names_missing_fields() {
        let spec: DatasetSpec = serde_json::from_str(r#"{"recipe": "builtin:primary", "step_s": 600}"#).unwrap();
        match spec.load("dataset", None) {
            Err(ExperimentError::Config { key, .. }) => assert_eq!(key, "dataset.lag_tau_s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sigma_grid_defaults() {
        let g = default_sigma_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
    }
}
