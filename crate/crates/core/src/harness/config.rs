//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{NoiseSpec, QuantileLevel};
use crate::error::{Error, Result};
use crate::neural::{Architecture, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Prediction bands on the cubic-exponential dataset.
    Qualitative,
    /// MAE to theoretical quantiles across noise families.
    NonGaussianTable,
    /// TL / NLL / speed on user-supplied tabular data.
    BenchmarkTable,
    /// In-distribution vs out-of-distribution uncertainty.
    Disentangle,
    /// Sweep over the evidence-regularization coefficient.
    Ablation,
}

impl ExperimentKind {
    /// Regularization strength used when the config does not set one.
    pub fn default_lambda(self) -> f64 {
        match self {
            ExperimentKind::Qualitative | ExperimentKind::Disentangle => 0.3,
            _ => 0.5,
        }
    }

    /// L2 coefficient used when the config does not set one.
    pub fn default_weight_decay(self) -> f64 {
        match self {
            ExperimentKind::Disentangle => 1e-4,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EvidentialQuantile,
    /// Reserved for the Gaussian evidential comparison; rejected at validation.
    EvidentialGaussian,
    Dropout,
    Ensemble,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::EvidentialQuantile => "evidential_quantile",
            Method::EvidentialGaussian => "evidential_gaussian",
            Method::Dropout => "dropout",
            Method::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSettings {
    #[serde(default = "five")]
    pub mc_samples: usize,
    #[serde(default = "five")]
    pub ensemble_size: usize,
}

fn five() -> usize {
    5
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self { mc_samples: 5, ensemble_size: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedNoise {
    pub name: String,
    pub noise: NoiseSpec,
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// y = x³ + noise with x uniform on `x_range`, one dataset per noise entry.
    Synthetic {
        n: usize,
        x_range: [f64; 2],
        datasets: Vec<NamedNoise>,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
    },
    /// Headed numeric CSV files; every non-target column is a feature.
    Csv {
        files: Vec<PathBuf>,
        target: String,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
    },
}

impl DataSource {
    pub fn fractions(&self) -> [f64; 3] {
        match self {
            DataSource::Synthetic { fractions, .. } | DataSource::Csv { fractions, .. } => *fractions,
        }
    }
}

/// Evaluation grid for band files (one-dimensional synthetic data only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// |x| bound of the in-distribution band.
    #[serde(default = "default_inner")]
    pub in_distribution: f64,
    /// |x| interval of the out-of-distribution band.
    #[serde(default = "default_outer")]
    pub out_of_distribution: [f64; 2],
}

fn default_inner() -> f64 {
    3.0
}

fn default_outer() -> [f64; 2] {
    [5.0, 7.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSettings {
    #[serde(default = "default_timing_batch")]
    pub batch: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_timing_batch() -> usize {
    1024
}

fn default_repetitions() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub methods: Vec<Method>,
    pub quantiles: Vec<QuantileLevel>,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub architecture: Architecture,
    pub train: TrainSettings,
    #[serde(default)]
    pub sampling: SamplingSettings,
    pub data: DataSource,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub ablation: Option<AblationSettings>,
    #[serde(default)]
    pub timing: Option<TimingSettings>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        // Relative CSV paths are resolved against the config's directory.
        if let (DataSource::Csv { files, .. }, Some(dir)) = (&mut config.data, path.parent()) {
            for f in files.iter_mut().filter(|f| f.is_relative()) {
                *f = dir.join(&*f);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.methods.contains(&Method::EvidentialGaussian) {
            return bad("method `evidential_gaussian` is a documented stub and cannot be run".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        self.train_config(self.seed)?.validate()?;
        self.architecture.mlp(1, 1).validate()?;
        if self.methods.contains(&Method::Dropout) && self.sampling.mc_samples < 2 {
            return bad("sampling.mc_samples must be at least 2".into());
        }
        if self.methods.contains(&Method::Ensemble) && self.sampling.ensemble_size < 2 {
            return bad("sampling.ensemble_size must be at least 2".into());
        }
        let f = self.data.fractions();
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("data.fractions must be non-negative and sum to 1, got {f:?}"));
        }
        if f[1] == 0.0 || f[2] == 0.0 {
            return bad("validation and test fractions must be positive".into());
        }
        match &self.data {
            DataSource::Synthetic { n, x_range, datasets, .. } => {
                if *n < 10 {
                    return bad("data.n must be at least 10".into());
                }
                if x_range.iter().any(|v| !v.is_finite()) || x_range[0] >= x_range[1] {
                    return bad(format!("data.x_range must satisfy lo < hi, got {x_range:?}"));
                }
                if datasets.is_empty() {
                    return bad("data.datasets must list at least one noise specification".into());
                }
                for d in datasets {
                    d.noise.validate()?;
                }
            }
            DataSource::Csv { files, delimiter, .. } => {
                if files.is_empty() {
                    return bad("data.files must list at least one csv".into());
                }
                if !delimiter.is_ascii() {
                    return bad("data.delimiter must be a single ASCII character".into());
                }
                if self.grid.is_some() {
                    return bad("grid bands need one-dimensional synthetic data".into());
                }
            }
        }
        if let Some(g) = &self.grid {
            if !g.lo.is_finite() || !g.hi.is_finite() || g.lo >= g.hi || g.points < 2 {
                return bad("grid needs lo < hi and at least 2 points".into());
            }
            let [a, b] = g.out_of_distribution;
            if !(g.in_distribution > 0.0 && a < b) {
                return bad("grid bands need in_distribution > 0 and an increasing out_of_distribution pair".into());
            }
        }
        match (self.kind, &self.ablation) {
            (ExperimentKind::Ablation, None) => return bad("ablation experiments need [ablation] lambdas".into()),
            (ExperimentKind::Ablation, Some(a)) => {
                if a.lambdas.is_empty() || a.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
                    return bad("ablation.lambdas must be a non-empty list of values >= 0".into());
                }
                if self.methods != [Method::EvidentialQuantile] {
                    return bad("ablation applies to `evidential_quantile` only".into());
                }
                if self.grid.is_none() {
                    return bad("ablation experiments need a [grid] to measure uncertainty width".into());
                }
            }
            _ => {}
        }
        if matches!(self.kind, ExperimentKind::Qualitative | ExperimentKind::Disentangle) && self.grid.is_none() {
            return bad("qualitative and disentangle experiments need a [grid]".into());
        }
        if let Some(t) = &self.timing {
            if t.batch == 0 || t.repetitions < 10 {
                return bad("timing needs batch >= 1 and repetitions >= 10".into());
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.train.lambda.unwrap_or(self.kind.default_lambda())
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            lambda: self.lambda(),
            seed,
            quantiles: self.quantiles.clone(),
            weight_decay: t.weight_decay.unwrap_or(self.kind.default_weight_decay()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: None, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Settings for training a single model outside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecipe {
    pub quantiles: Vec<QuantileLevel>,
    pub architecture: Architecture,
    pub train: TrainSettings,
    #[serde(default)]
    pub sampling: SamplingSettings,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self {
            quantiles: [0.05, 0.95].map(|q| QuantileLevel::new(q).expect("valid level")).to_vec(),
            architecture: Architecture { hidden_layers: 3, hidden_units: 128, dropout_rate: 0.1 },
            train: TrainSettings {
                learning_rate: 3e-3,
                batch_size: 64,
                max_epochs: 300,
                early_stop_patience: 20,
                lambda: None,
                weight_decay: None,
            },
            sampling: SamplingSettings::default(),
            fractions: default_fractions(),
        }
    }
}

impl TrainRecipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let recipe: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        recipe.train_config(0)?;
        recipe.architecture.mlp(1, 1).validate()?;
        Ok(recipe)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Training settings; λ defaults to the tabular value.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            lambda: t.lambda.unwrap_or(ExperimentKind::BenchmarkTable.default_lambda()),
            seed,
            quantiles: self.quantiles.clone(),
            weight_decay: t.weight_decay.unwrap_or(0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
