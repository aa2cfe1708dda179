//! Run configuration: a TOML file with `[data]`, `[model]`, `[train]` and
//! `[output]` tables. Only `model.kind` is required; every other key has a
//! default, and defaults for `[model]` and `[train]` depend on the kind.
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use drugsent::models::{ModelConfig, ModelKind};
use drugsent::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Prepared training file.
    pub train: Option<PathBuf>,
    /// Prepared evaluation file; when set, `train` also reports on it.
    pub test: Option<PathBuf>,
    /// Stratified fraction of the training file to use.
    pub fraction: f64,
    /// Seed of the subsample.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            fraction: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    data: RawData,
    model: Option<RawModel>,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    fraction: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<ModelKind>,
    checkpoint_id: Option<String>,
    embeddings: Option<String>,
    filters_per_width: Option<usize>,
    filter_widths: Option<Vec<usize>>,
    hidden_size: Option<usize>,
    max_len: Option<usize>,
    num_classes: Option<usize>,
    trainable_encoder_layers: Option<usize>,
    freeze_embeddings: Option<bool>,
    dropout: Option<f64>,
    seed: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs_max: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    early_stop_patience: Option<usize>,
    validation_fraction: Option<f64>,
    seed: Option<u64>,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            path: origin.to_owned(),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let m = raw.model.ok_or_else(|| invalid("missing required key model.kind".into()))?;
        let kind = m.kind.ok_or_else(|| invalid("missing required key model.kind".into()))?;
        let d = ModelConfig::new(kind);
        let checkpoint_id = m.checkpoint_id.or(d.checkpoint_id).map(|id| {
            // A relative directory next to the config wins over a registry id.
            let local = base.join(&id);
            if Path::new(&id).is_relative() && local.is_dir() {
                local.to_string_lossy().into_owned()
            } else {
                id
            }
        });
        let model = ModelConfig {
            kind,
            checkpoint_id,
            embeddings: m
                .embeddings
                .map(|e| resolve(base, PathBuf::from(e)).to_string_lossy().into_owned()),
            filters_per_width: m.filters_per_width.unwrap_or(d.filters_per_width),
            filter_widths: m.filter_widths.unwrap_or(d.filter_widths),
            hidden_size: m.hidden_size.unwrap_or(d.hidden_size),
            max_len: m.max_len.unwrap_or(d.max_len),
            num_classes: m.num_classes.unwrap_or(d.num_classes),
            trainable_encoder_layers: m.trainable_encoder_layers.unwrap_or(d.trainable_encoder_layers),
            freeze_embeddings: m.freeze_embeddings.unwrap_or(d.freeze_embeddings),
            dropout: m.dropout.unwrap_or(d.dropout),
            seed: m.seed.unwrap_or(d.seed),
        };
        let t = raw.train;
        let td = TrainConfig::for_kind(kind);
        let train = TrainConfig {
            epochs_max: t.epochs_max.unwrap_or(td.epochs_max),
            batch_size: t.batch_size.unwrap_or(td.batch_size),
            learning_rate: t.learning_rate.unwrap_or(td.learning_rate),
            early_stop_patience: t.early_stop_patience.unwrap_or(td.early_stop_patience),
            validation_fraction: t.validation_fraction.unwrap_or(td.validation_fraction),
            seed: t.seed.unwrap_or(model.seed),
        };
        let dd = DataConfig::default();
        let data = DataConfig {
            train: raw.data.train.map(|p| resolve(base, p)),
            test: raw.data.test.map(|p| resolve(base, p)),
            fraction: raw.data.fraction.unwrap_or(dd.fraction),
            seed: raw.data.seed.unwrap_or(dd.seed),
        };
        let output = OutputConfig {
            dir: raw.output.dir.map(|p| resolve(base, p)),
        };
        let config = Self {
            data,
            model,
            train,
            output,
        };
        config.validate().map_err(invalid)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if !(self.data.fraction > 0.0 && self.data.fraction <= 1.0) {
            return Err(format!("data.fraction {} is outside (0, 1]", self.data.fraction));
        }
        Ok(())
    }

    /// Reads and resolves a config file.
    pub fn parse_config(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, path)
    }

    /// The fully resolved config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
