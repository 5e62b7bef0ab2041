//! TOML run configuration.
//!
//! One flat, fully documented file drives `train`: a `[data]` section naming
//! the dataset and split, a `[model]` section sizing the encoder, and a
//! `[train]` section for the optimizer schedule. Unknown keys are rejected
//! so typos fail loudly, and nothing reads the environment — every knob that
//! affected a run is in the config and therefore in the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, SplitMode, SplitSpec};
use crate::encoder::ModelConfig;
use crate::training::TrainConfig;

use super::CliError;

/// Which bundled CSV column layout the dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    /// `smiles, logS, n_measurements, logS_std` — aqueous solubility.
    #[default]
    Aqueous,
    /// `solute_smiles, solvent_smiles, temperature, solvent_density,
    /// experimental_logS` — solute/solvent pairs with temperature.
    Combisolu,
}

impl SchemaKind {
    /// The column mapping for this layout.
    pub fn csv_schema(self) -> CsvSchema {
        match self {
            SchemaKind::Aqueous => CsvSchema::aqueous(),
            SchemaKind::Combisolu => CsvSchema::combisolu(),
        }
    }
}

/// `[data]`: dataset location, schema, and split policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Path to the CSV dataset, relative to the working directory.
    pub dataset: PathBuf,
    /// Column layout; defaults to `aqueous`.
    #[serde(default)]
    pub schema: SchemaKind,
    /// Split mode: `random`, `accurate`, or `t298`. Defaults to `random`.
    #[serde(default = "default_mode")]
    pub mode: SplitMode,
    /// Split seed.
    #[serde(default)]
    pub seed: u64,
    /// Fraction of unique solutes held out for testing.
    #[serde(default = "default_fraction")]
    pub test_fraction: f64,
    /// Fraction of unique solutes held out for validation.
    #[serde(default = "default_fraction")]
    pub val_fraction: f64,
}

fn default_mode() -> SplitMode {
    SplitMode::Random
}

fn default_fraction() -> f64 {
    0.10
}

impl DataSection {
    /// The split specification this section describes.
    pub fn split_spec(&self) -> SplitSpec {
        let mut spec = SplitSpec::new(self.mode, self.seed);
        spec.test_fraction = self.test_fraction;
        spec.val_fraction = self.val_fraction;
        spec
    }
}

/// `[model]`: encoder dimensions. Defaults are the desk-scale preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Encoder layers.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Attention heads per layer.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Dimension per head (model width = heads x head_dim).
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    /// Feed-forward hidden width.
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    /// Maximum input length in tokens.
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Concatenate a temperature feature before the head. Defaults to true
    /// for the combisolu schema and false otherwise.
    #[serde(default)]
    pub temperature_feature: Option<bool>,
}

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_head_dim() -> usize {
    16
}
fn default_ffn_dim() -> usize {
    64
}
fn default_max_tokens() -> usize {
    64
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: default_layers(),
            heads: default_heads(),
            head_dim: default_head_dim(),
            ffn_dim: default_ffn_dim(),
            max_tokens: default_max_tokens(),
            temperature_feature: None,
        }
    }
}

impl ModelSection {
    /// Build the encoder configuration. `vocab_size` is a placeholder —
    /// training overwrites it with the fitted vocabulary's size.
    pub fn model_config(&self, schema: SchemaKind) -> ModelConfig {
        ModelConfig {
            num_layers: self.layers,
            num_heads: self.heads,
            head_dim: self.head_dim,
            ffn_dim: self.ffn_dim,
            vocab_size: 0,
            max_tokens: self.max_tokens,
            use_temperature_feature: self
                .temperature_feature
                .unwrap_or(schema == SchemaKind::Combisolu),
        }
    }
}

/// `[train]`: optimizer schedule and output location.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Training epochs.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Samples per optimizer step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Peak learning rate.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Decoupled weight decay.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Huber loss transition point, in scaled label units.
    #[serde(default = "default_huber_delta")]
    pub huber_delta: f64,
    /// Fraction of total steps spent in linear warmup.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Parameter initialization seed.
    #[serde(default)]
    pub seed: u64,
    /// Optional hard cap on optimizer steps (handy for smoke runs).
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Train only the regression head.
    #[serde(default)]
    pub freeze_encoder: bool,
    /// Directory for checkpoints, logs, and manifests.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_huber_delta() -> f64 {
    1.0
}
fn default_warmup() -> f64 {
    0.05
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            huber_delta: default_huber_delta(),
            warmup_fraction: default_warmup(),
            seed: 0,
            max_steps: None,
            freeze_encoder: false,
            output_dir: default_output_dir(),
        }
    }
}

impl TrainSection {
    /// Build the optimizer configuration; the data seed comes from `[data]`.
    pub fn train_config(&self, data_seed: u64) -> TrainConfig {
        let mut config = TrainConfig::aqueous();
        config.epochs = self.epochs;
        config.batch_size = self.batch_size;
        config.learning_rate = self.learning_rate;
        config.weight_decay = self.weight_decay;
        config.huber_delta = self.huber_delta;
        config.warmup_fraction = self.warmup_fraction;
        config.model_seed = self.seed;
        config.data_seed = data_seed;
        config.max_steps = self.max_steps;
        config.freeze_encoder = self.freeze_encoder;
        config
    }
}

/// A whole run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset and split.
    pub data: DataSection,
    /// Encoder dimensions.
    #[serde(default)]
    pub model: ModelSection,
    /// Optimizer schedule.
    #[serde(default)]
    pub train: TrainSection,
}

/// Read and validate a TOML config file. Schema violations (unknown keys,
/// wrong types, missing `data.dataset`) surface with the offending key name
/// and are usage errors.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}
