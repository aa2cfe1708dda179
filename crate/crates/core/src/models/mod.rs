//! The four classifiers behind one interface: encode text, predict class
//! distributions, and compute batch losses with gradients for training.

pub mod bert;
mod cnn;
mod config;
mod dropout;
mod head;

use std::path::Path;

use ndarray::Array1;
use rand::RngCore;

use crate::corpus::SentimentClass;
use crate::encoders::{encode_static, encode_subword, EncodedExample, StaticEmbeddingTable, StaticVocab, WordPieceTokenizer};
use crate::error::ModelError;
use crate::nn::{cross_entropy, softmax, Gradients, ParamStore};
use crate::seeding::{SeedBank, Stream};

pub use bert::{pretrained_source, random_source, resolve_checkpoint, BertConfig, BertEncoder, TensorSource, CHECKPOINT_DIR_ENV};
pub use cnn::CnnNet;
pub use config::{ModelConfig, ModelKind, CLINICAL_CHECKPOINT, GENERAL_CHECKPOINT, NUM_CLASSES};
pub use dropout::Dropout;
pub use head::EncoderHead;

/// Softmax output for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassDistribution {
    pub probabilities: [f64; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn from_logits(logits: &Array1<f64>) -> Self {
        let p = softmax(logits.view());
        Self {
            probabilities: [p[0], p[1], p[2]],
        }
    }

    /// Most probable class; the lowest code wins ties.
    pub fn argmax(&self) -> SentimentClass {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        SentimentClass::ALL[best]
    }
}

#[derive(Debug, Clone)]
pub enum Network {
    Cnn(CnnNet),
    Encoder { encoder: BertEncoder, head: EncoderHead },
}

/// The text encoder a model expects its inputs from.
#[derive(Debug, Clone)]
pub enum InputEncoder {
    Static(StaticVocab),
    Subword(WordPieceTokenizer),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub network: Network,
    pub inputs: InputEncoder,
}

/// Builds the convolutional model with its embedding layer initialized from
/// `table`.
pub fn build_cnn(config: ModelConfig, table: StaticEmbeddingTable) -> Result<Model, ModelError> {
    if config.kind != ModelKind::CnnStatic {
        return Err(ModelError::Config(format!("build_cnn called for {}", config.kind)));
    }
    config.validate()?;
    let StaticEmbeddingTable { vocab, vectors } = table;
    if vectors.nrows() != vocab.rows() {
        return Err(ModelError::Shape(format!(
            "embedding table has {} rows for a vocabulary of {}",
            vectors.nrows(),
            vocab.rows()
        )));
    }
    if vectors.ncols() == 0 {
        return Err(ModelError::Shape("embedding dimension is zero".into()));
    }
    let mut store = ParamStore::new();
    let mut rng = SeedBank::new(config.seed).rng(Stream::Init);
    let net = CnnNet::register(
        &mut store,
        vectors,
        vocab.pad_index(),
        !config.freeze_embeddings,
        &config.filter_widths,
        config.filters_per_width,
        config.hidden_size,
        config.num_classes,
        &mut rng,
    );
    Ok(Model {
        config,
        store,
        network: Network::Cnn(net),
        inputs: InputEncoder::Static(vocab),
    })
}

/// Pretrained encoder with every encoder weight frozen; only the head trains.
pub fn build_frozen_encoder_head(config: ModelConfig) -> Result<Model, ModelError> {
    if config.kind != ModelKind::FrozenEncoderHead {
        return Err(ModelError::Config(format!("build_frozen_encoder_head called for {}", config.kind)));
    }
    build_from_checkpoint(config)
}

/// Pretrained encoder whose top `trainable_encoder_layers` blocks train with
/// the head.
pub fn build_finetuned_encoder(config: ModelConfig) -> Result<Model, ModelError> {
    if !config.kind.is_finetuned() {
        return Err(ModelError::Config(format!("build_finetuned_encoder called for {}", config.kind)));
    }
    build_from_checkpoint(config)
}

fn build_from_checkpoint(config: ModelConfig) -> Result<Model, ModelError> {
    config.validate()?;
    let id = config.checkpoint_id.clone().unwrap_or_default();
    let dir = resolve_checkpoint(&id)?;
    log::info!("loading encoder checkpoint {id:?} from {}", dir.display());
    let (bert_config, tokenizer) = read_encoder_assets(&dir)?;
    let mut source = pretrained_source(&dir)?;
    build_encoder(config, bert_config, tokenizer, &mut source)
}

/// Reads `config.json` and the tokenizer files of a checkpoint directory.
pub fn read_encoder_assets(dir: &Path) -> Result<(BertConfig, WordPieceTokenizer), ModelError> {
    let bert_config = BertConfig::from_file(&dir.join("config.json"))?;
    let tokenizer = WordPieceTokenizer::from_dir(dir)?;
    Ok((bert_config, tokenizer))
}

/// Assembles an encoder model from explicit parts. `source` supplies the
/// encoder weights; the head is initialized from the config seed.
pub fn build_encoder(
    config: ModelConfig,
    bert_config: BertConfig,
    tokenizer: WordPieceTokenizer,
    source: &mut TensorSource<'_>,
) -> Result<Model, ModelError> {
    if !config.kind.uses_encoder() {
        return Err(ModelError::Config(format!("{} has no encoder", config.kind)));
    }
    config.validate()?;
    if config.trainable_encoder_layers > bert_config.num_hidden_layers {
        return Err(ModelError::Config(format!(
            "trainable_encoder_layers = {} but the encoder has only {} blocks",
            config.trainable_encoder_layers, bert_config.num_hidden_layers
        )));
    }
    if config.max_len > bert_config.max_position_embeddings {
        return Err(ModelError::Config(format!(
            "max_len {} exceeds the encoder's {} positions",
            config.max_len, bert_config.max_position_embeddings
        )));
    }
    if tokenizer.vocab_size() > bert_config.vocab_size {
        return Err(ModelError::Shape(format!(
            "tokenizer vocabulary ({}) is larger than the embedding table ({})",
            tokenizer.vocab_size(),
            bert_config.vocab_size
        )));
    }
    let mut store = ParamStore::new();
    let hidden = bert_config.hidden_size;
    let encoder = BertEncoder::register(&mut store, bert_config, config.trainable_encoder_layers, source)?;
    let mut rng = SeedBank::new(config.seed).rng(Stream::Init);
    let head = EncoderHead::register(&mut store, hidden, config.hidden_size, config.num_classes, &mut rng);
    Ok(Model {
        config,
        store,
        network: Network::Encoder { encoder, head },
        inputs: InputEncoder::Subword(tokenizer),
    })
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn encode(&self, text: &str) -> EncodedExample {
        match &self.inputs {
            InputEncoder::Static(vocab) => encode_static(text, vocab, self.config.max_len),
            InputEncoder::Subword(tok) => encode_subword(text, tok, self.config.max_len),
        }
    }

    fn vocab_rows(&self) -> usize {
        match &self.network {
            Network::Cnn(net) => net.vocab_rows(&self.store),
            Network::Encoder { encoder, .. } => encoder.config.vocab_size,
        }
    }

    fn check(&self, example: &EncodedExample) -> Result<(), ModelError> {
        if example.len() != self.config.max_len || example.attention_mask.len() != self.config.max_len {
            return Err(ModelError::Shape(format!(
                "encoded length {} does not match max_len {}",
                example.len(),
                self.config.max_len
            )));
        }
        let rows = self.vocab_rows();
        if let Some(&id) = example.token_ids.iter().find(|&&id| id as usize >= rows) {
            return Err(ModelError::Shape(format!("token id {id} is outside the vocabulary of {rows}")));
        }
        if let Network::Encoder { .. } = self.network {
            if example.real_len() == 0 {
                return Err(ModelError::Shape("encoder input has no unmasked positions".into()));
            }
        }
        Ok(())
    }

    /// Unnormalized class scores in evaluation mode.
    pub fn logits(&self, example: &EncodedExample) -> Result<Array1<f64>, ModelError> {
        self.check(example)?;
        Ok(self.run(example, None, &mut Dropout::Off))
    }

    pub fn predict_proba(&self, batch: &[EncodedExample]) -> Result<Vec<ClassDistribution>, ModelError> {
        batch
            .iter()
            .map(|e| self.logits(e).map(|l| ClassDistribution::from_logits(&l)))
            .collect()
    }

    pub fn predict(&self, batch: &[EncodedExample]) -> Result<Vec<SentimentClass>, ModelError> {
        Ok(self.predict_proba(batch)?.iter().map(ClassDistribution::argmax).collect())
    }

    /// Mean cross-entropy over `batch` in evaluation mode.
    pub fn mean_loss(&self, batch: &[EncodedExample]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for e in batch {
            let target = label_of(e)?;
            total += cross_entropy(self.logits(e)?.view(), target).0;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Mean cross-entropy over `batch`, accumulating its gradient into
    /// `grads`. Dropout is active when `dropout_rng` is given.
    pub fn loss_and_grad(
        &self,
        batch: &[EncodedExample],
        grads: &mut Gradients,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for e in batch {
            self.check(e)?;
            let target = label_of(e)?;
            let mut dropout = match dropout_rng.as_deref_mut() {
                Some(rng) if self.config.dropout > 0.0 => Dropout::On {
                    rate: self.config.dropout,
                    rng,
                },
                _ => Dropout::Off,
            };
            let mut loss = 0.0;
            let mut loss_grad = |logits: &Array1<f64>| {
                let (l, g) = cross_entropy(logits.view(), target);
                loss = l;
                g * scale
            };
            self.run(e, Some((grads, &mut loss_grad)), &mut dropout);
            total += loss;
        }
        Ok(total * scale)
    }

    fn run(
        &self,
        example: &EncodedExample,
        backward: Option<(&mut Gradients, &mut dyn FnMut(&Array1<f64>) -> Array1<f64>)>,
        dropout: &mut Dropout<'_>,
    ) -> Array1<f64> {
        let store = &self.store;
        match &self.network {
            Network::Cnn(net) => match backward {
                None => net.logits(store, &example.token_ids),
                Some((grads, loss_grad)) => net.forward_backward(store, grads, &example.token_ids, dropout, loss_grad),
            },
            Network::Encoder { encoder, head } => {
                let ids = example.real_ids();
                let first = encoder.first_trainable_block(store);
                let cache_from = if backward.is_some() { first } else { encoder.num_layers() };
                let (states, trace) = encoder.forward(store, ids, cache_from);
                let (logits, cache) = head.forward(store, states.view(), dropout);
                if let Some((grads, loss_grad)) = backward {
                    let dlogits = loss_grad(&logits);
                    let through = first < encoder.num_layers();
                    if let Some(dstates) = head.backward(store, grads, states.view(), &cache, &dlogits, through) {
                        encoder.backward(store, grads, &trace, dstates);
                    }
                }
                logits
            }
        }
    }

    /// Parameters a gradient step may change, by name.
    pub fn trainable_names(&self) -> Vec<&str> {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.name.as_str())
            .collect()
    }

    pub fn parameter_hash(&self) -> String {
        self.store.content_hash()
    }
}

fn label_of(e: &EncodedExample) -> Result<usize, ModelError> {
    e.label
        .map(SentimentClass::index)
        .ok_or_else(|| ModelError::Training("example has no label".into()))
}
