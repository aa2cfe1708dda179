//! Mini-batch Adam training with validation early stopping, and checkpoint
//! persistence.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{stratified_indices, SentimentClass};
use crate::encoders::{EncodedExample, StaticEmbeddingTable, StaticVocab, TokenizerConfig, WordPieceTokenizer};
use crate::error::{io_err, ModelError};
use crate::metrics::macro_f1;
use crate::models::{build_cnn, build_encoder, BertConfig, ClassDistribution, InputEncoder, Model, ModelConfig, ModelKind, Network};
use crate::nn::{cross_entropy, hex_digest, safetensors, Adam, Gradients};
use crate::seeding::{SeedBank, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a validation macro-F1 improvement before stopping;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults per model family.
    pub fn for_kind(kind: ModelKind) -> Self {
        let (epochs_max, learning_rate) = match kind {
            ModelKind::CnnStatic => (18, 1e-3),
            ModelKind::FinetuneGeneral => (8, 2e-5),
            ModelKind::FinetuneClinical => (11, 2e-5),
            ModelKind::FrozenEncoderHead => (10, 1e-3),
        };
        Self {
            epochs_max,
            batch_size: 32,
            learning_rate,
            early_stop_patience: 3,
            validation_fraction: 0.1,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.epochs_max == 0 {
            return fail("epochs_max must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction {} is outside [0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Number of epochs completed.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub train_examples: usize,
    pub validation_examples: usize,
}

/// Tracks validation macro F1 across epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    /// `patience == 0` never stops.
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn update(&mut self, score: f64) -> StopVerdict {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.since_best = 0;
            return StopVerdict::Improved;
        }
        self.since_best += 1;
        if self.patience > 0 && self.since_best >= self.patience {
            StopVerdict::Stop
        } else {
            StopVerdict::Continue
        }
    }
}

/// Trains `model` on `examples`, carving a stratified validation split when
/// `validation_fraction > 0`. Returns the parameters of the best validation
/// epoch (or the last epoch without validation data).
pub fn train(mut model: Model, examples: &[EncodedExample], config: &TrainConfig) -> Result<(Model, TrainHistory), ModelError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ModelError::Training("empty training set".into()));
    }
    let labels: Vec<SentimentClass> = examples
        .iter()
        .map(|e| e.label.ok_or_else(|| ModelError::Training("training example has no label".into())))
        .collect::<Result<_, _>>()?;
    let bank = SeedBank::new(config.seed);
    let validation: Vec<usize> = if config.validation_fraction > 0.0 {
        stratified_indices(&labels, config.validation_fraction, config.seed)
            .map_err(|e| ModelError::Training(e.to_string()))?
    } else {
        Vec::new()
    };
    let mut in_validation = vec![false; examples.len()];
    for &i in &validation {
        in_validation[i] = true;
    }
    let mut train_idx: Vec<usize> = (0..examples.len()).filter(|&i| !in_validation[i]).collect();
    if train_idx.is_empty() {
        return Err(ModelError::Training("validation split left no training examples".into()));
    }
    let val_set: Vec<EncodedExample> = validation.iter().map(|&i| examples[i].clone()).collect();
    let val_gold: Vec<SentimentClass> = validation.iter().map(|&i| labels[i]).collect();

    let mut adam = Adam::new(&model.store, config.learning_rate);
    let mut shuffle_rng = bank.rng(Stream::Shuffle);
    let mut dropout_rng = bank.rng(Stream::Dropout);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        train_examples: train_idx.len(),
        validation_examples: val_set.len(),
    };
    let mut stopping = EarlyStopping::new(config.early_stop_patience);
    let mut best_params: Option<Vec<Option<ArrayD<f64>>>> = None;

    for epoch in 1..=config.epochs_max {
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<EncodedExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let mut grads = Gradients::zeros_like(&model.store);
            let loss = model.loss_and_grad(&batch, &mut grads, Some(&mut dropout_rng))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {} (batch loss {loss})",
                    adam.steps() + 1
                )));
            }
            adam.step(&mut model.store, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let mut record = EpochRecord {
            epoch,
            train_loss,
            validation_loss: None,
            validation_macro_f1: None,
        };
        history.stopped_epoch = epoch;
        if val_set.is_empty() {
            history.best_epoch = epoch;
            log::info!("epoch {epoch}: train loss {train_loss:.5}");
            history.epochs.push(record);
            continue;
        }
        let mut pred = Vec::with_capacity(val_set.len());
        let mut val_loss = 0.0;
        for (e, gold) in val_set.iter().zip(&val_gold) {
            let logits = model.logits(e)?;
            val_loss += cross_entropy(logits.view(), gold.index()).0;
            pred.push(ClassDistribution::from_logits(&logits).argmax());
        }
        val_loss /= val_set.len() as f64;
        let f1 = macro_f1(&val_gold, &pred).map_err(|e| ModelError::Training(e.to_string()))?;
        record.validation_loss = Some(val_loss);
        record.validation_macro_f1 = Some(f1);
        history.epochs.push(record);
        log::info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}, macro F1 {f1:.4}");
        match stopping.update(f1) {
            StopVerdict::Improved => {
                best_params = Some(model.store.snapshot_trainable());
                history.best_epoch = epoch;
            }
            StopVerdict::Continue => {}
            StopVerdict::Stop => {
                log::info!("early stop after epoch {epoch}; best epoch {}", history.best_epoch);
                break;
            }
        }
    }
    if let Some(snapshot) = best_params {
        model.store.restore_trainable(&snapshot);
    }
    Ok((model, history))
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn data_fingerprint(path: &Path) -> Result<String, ModelError> {
    let bytes = std::fs::read(path).map_err(io_err::<ModelError, _>(path))?;
    Ok(hex_digest(&Sha256::digest(&bytes)))
}

/// Checkpoint metadata written as `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub kind: ModelKind,
    pub checkpoint_id: Option<String>,
    pub seed: u64,
    pub epochs_run: usize,
    pub data_fingerprint: String,
    pub parameter_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const HISTORY_FILE: &str = "history.json";
const STATIC_VOCAB_FILE: &str = "static_vocab.txt";
const ENCODER_CONFIG_FILE: &str = "config.json";
const VOCAB_FILE: &str = "vocab.txt";
const TOKENIZER_CONFIG_FILE: &str = "tokenizer_config.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ModelError> {
    std::fs::write(path, contents).map_err(io_err::<ModelError, _>(path))
}

fn read_file(path: &Path) -> Result<String, ModelError> {
    std::fs::read_to_string(path).map_err(io_err::<ModelError, _>(path))
}

fn lines_file(items: &[String]) -> String {
    let mut out = items.join("\n");
    out.push('\n');
    out
}

/// Writes weights, tokenizer assets, the manifest and (when given) the
/// training history into `dir`.
pub fn save_checkpoint(
    model: &Model,
    dir: &Path,
    train: &TrainConfig,
    history: Option<&TrainHistory>,
    data_fingerprint: &str,
) -> Result<CheckpointManifest, ModelError> {
    std::fs::create_dir_all(dir).map_err(io_err::<ModelError, _>(dir))?;
    safetensors::write(
        &dir.join(WEIGHTS_FILE),
        model.store.iter().map(|(_, p)| (p.name.as_str(), &p.value)),
    )?;
    match (&model.inputs, &model.network) {
        (InputEncoder::Static(vocab), _) => write_file(&dir.join(STATIC_VOCAB_FILE), lines_file(vocab.tokens()))?,
        (InputEncoder::Subword(tok), Network::Encoder { encoder, .. }) => {
            write_file(&dir.join(VOCAB_FILE), lines_file(tok.vocab()))?;
            let tok_config = serde_json::to_string_pretty(tok.config()).expect("tokenizer config serializes");
            write_file(&dir.join(TOKENIZER_CONFIG_FILE), tok_config + "\n")?;
            let enc_config = serde_json::to_string_pretty(&encoder.config).expect("encoder config serializes");
            write_file(&dir.join(ENCODER_CONFIG_FILE), enc_config + "\n")?;
        }
        (InputEncoder::Subword(_), Network::Cnn(_)) => {
            return Err(ModelError::Config("CNN model with subword inputs".into()));
        }
    }
    let manifest = CheckpointManifest {
        kind: model.config.kind,
        checkpoint_id: model.config.checkpoint_id.clone(),
        seed: model.config.seed,
        epochs_run: history.map_or(0, |h| h.stopped_epoch),
        data_fingerprint: data_fingerprint.to_owned(),
        parameter_hash: model.parameter_hash(),
        model: model.config.clone(),
        train: train.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| ModelError::Checkpoint {
        path: dir.join(MANIFEST_FILE),
        message: e.to_string(),
    })?;
    write_file(&dir.join(MANIFEST_FILE), text)?;
    if let Some(h) = history {
        let json = serde_json::to_string_pretty(h).expect("history serializes");
        write_file(&dir.join(HISTORY_FILE), json + "\n")?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, ModelError> {
    let path = dir.join(MANIFEST_FILE);
    toml::from_str(&read_file(&path)?).map_err(|e| ModelError::Checkpoint {
        path,
        message: e.to_string(),
    })
}

/// Rebuilds a saved model. Fails when the manifest disagrees with itself or
/// with the stored weights.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest), ModelError> {
    let manifest = read_manifest(dir)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let mismatch = |message: String| ModelError::Checkpoint {
        path: dir.join(MANIFEST_FILE),
        message,
    };
    if manifest.kind != manifest.model.kind {
        return Err(mismatch(format!(
            "kind {} disagrees with model.kind {}",
            manifest.kind, manifest.model.kind
        )));
    }
    if manifest.seed != manifest.model.seed {
        return Err(mismatch(format!("seed {} disagrees with model.seed {}", manifest.seed, manifest.model.seed)));
    }
    let mut weights: BTreeMap<String, ArrayD<f64>> = safetensors::read(&weights_path)?;
    let weight_error = |message: String| ModelError::Checkpoint {
        path: weights_path.clone(),
        message,
    };
    let mut model = if manifest.kind == ModelKind::CnnStatic {
        let tokens: Vec<String> = read_file(&dir.join(STATIC_VOCAB_FILE))?
            .lines()
            .map(str::to_owned)
            .collect();
        let vocab = StaticVocab::from_tokens(tokens)?;
        let vectors = weights
            .get("embedding.weight")
            .ok_or_else(|| weight_error("missing embedding.weight".into()))?
            .clone()
            .into_dimensionality()
            .map_err(|e| weight_error(format!("embedding.weight: {e}")))?;
        build_cnn(manifest.model.clone(), StaticEmbeddingTable { vocab, vectors })?
    } else {
        let bert_config = BertConfig::from_file(&dir.join(ENCODER_CONFIG_FILE))?;
        let vocab: Vec<String> = read_file(&dir.join(VOCAB_FILE))?.lines().map(str::to_owned).collect();
        let tok_config_path = dir.join(TOKENIZER_CONFIG_FILE);
        let tok_config: TokenizerConfig =
            serde_json::from_str(&read_file(&tok_config_path)?).map_err(|e| ModelError::Checkpoint {
                path: tok_config_path.clone(),
                message: e.to_string(),
            })?;
        let tokenizer = WordPieceTokenizer::new(vocab, tok_config)?;
        let mut source = |name: &str, shape: &[usize]| -> Result<ArrayD<f64>, ModelError> {
            weights
                .get(name)
                .filter(|t| t.shape() == shape)
                .cloned()
                .ok_or_else(|| ModelError::Checkpoint {
                    path: weights_path.clone(),
                    message: format!("missing or misshapen tensor {name} (expected {shape:?})"),
                })
        };
        build_encoder(manifest.model.clone(), bert_config, tokenizer, &mut source)?
    };
    for (_, p) in model.store.iter_mut() {
        let value = weights
            .remove(&p.name)
            .ok_or_else(|| weight_error(format!("missing tensor {}", p.name)))?;
        if value.shape() != p.value.shape() {
            return Err(weight_error(format!(
                "{}: expected shape {:?}, found {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
    }
    if let Some(extra) = weights.keys().next() {
        return Err(weight_error(format!("unexpected tensor {extra}")));
    }
    if model.parameter_hash() != manifest.parameter_hash {
        return Err(weight_error("parameter hash differs from the manifest".into()));
    }
    Ok((model, manifest))
}
