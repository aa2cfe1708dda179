//! BERT encoder with backward passes through the trainable top blocks.
//!
//! Sequences are run on their unpadded prefix only. Padded key positions
//! receive zero attention weight in the reference implementation, so real
//! positions produce the same hidden states either way, and the pooling
//! head ignores padded positions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::nn::{
    gelu, gelu_grad, safetensors, softmax_rows, Gradients, LayerNorm, LayerNormCache, Linear, ParamId,
    ParamStore,
};

/// Environment variable naming the local checkpoint cache directory.
pub const CHECKPOINT_DIR_ENV: &str = "DRUGSENT_CHECKPOINT_DIR";

/// The subset of a published `config.json` this encoder uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_act")]
    pub hidden_act: String,
}

fn default_type_vocab() -> usize {
    2
}

fn default_ln_eps() -> f64 {
    1e-12
}

fn default_act() -> String {
    "gelu".into()
}

impl BertConfig {
    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })?;
        let config: Self = serde_json::from_str(&raw).map_err(|e| ModelError::Checkpoint {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        config.validate().map_err(|message| ModelError::Checkpoint {
            path: path.to_owned(),
            message,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_attention_heads == 0 || !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if self.hidden_act != "gelu" {
            return Err(format!("unsupported hidden_act {:?} (only exact gelu)", self.hidden_act));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }
}

#[derive(Debug, Clone)]
struct Embeddings {
    word: ParamId,
    position: ParamId,
    token_type: ParamId,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
}

struct BlockCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_norm: LayerNormCache,
    h1: Array2<f64>,
    inter_pre: Array2<f64>,
    inter: Array2<f64>,
    out_norm: LayerNormCache,
}

/// Activations of the trainable blocks from one forward pass.
pub struct EncoderTrace {
    first_cached: usize,
    blocks: Vec<BlockCache>,
}

/// Supplies the initial value of each named parameter given its expected shape.
pub type TensorSource<'a> = dyn FnMut(&str, &[usize]) -> Result<ArrayD<f64>, ModelError> + 'a;

struct Registrar<'s, 'a> {
    store: &'s mut ParamStore,
    source: &'s mut TensorSource<'a>,
    eps: f64,
}

impl Registrar<'_, '_> {
    fn tensor(&mut self, name: String, shape: &[usize], trainable: bool) -> Result<ParamId, ModelError> {
        let value = (self.source)(&name, shape)?;
        if value.shape() != shape {
            return Err(ModelError::Shape(format!(
                "{name}: expected {shape:?}, found {:?}",
                value.shape()
            )));
        }
        Ok(self.store.add(name, value, trainable))
    }

    fn linear(&mut self, prefix: &str, inputs: usize, outputs: usize, trainable: bool) -> Result<Linear, ModelError> {
        Ok(Linear {
            weight: self.tensor(format!("{prefix}.weight"), &[outputs, inputs], trainable)?,
            bias: self.tensor(format!("{prefix}.bias"), &[outputs], trainable)?,
        })
    }

    fn norm(&mut self, prefix: &str, size: usize, trainable: bool) -> Result<LayerNorm, ModelError> {
        Ok(LayerNorm {
            gamma: self.tensor(format!("{prefix}.LayerNorm.weight"), &[size], trainable)?,
            beta: self.tensor(format!("{prefix}.LayerNorm.bias"), &[size], trainable)?,
            eps: self.eps,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BertEncoder {
    pub config: BertConfig,
    embeddings: Embeddings,
    blocks: Vec<Block>,
}

impl BertEncoder {
    /// Registers every encoder parameter under the `bert.` prefix. The top
    /// `trainable_layers` blocks are trainable; lower blocks and the
    /// embeddings are frozen.
    pub fn register(
        store: &mut ParamStore,
        config: BertConfig,
        trainable_layers: usize,
        source: &mut TensorSource<'_>,
    ) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        if trainable_layers > config.num_hidden_layers {
            return Err(ModelError::Config(format!(
                "cannot fine-tune {trainable_layers} blocks of a {}-block encoder",
                config.num_hidden_layers
            )));
        }
        let h = config.hidden_size;
        let mut r = Registrar {
            store,
            source,
            eps: config.layer_norm_eps,
        };
        let embeddings = Embeddings {
            word: r.tensor("bert.embeddings.word_embeddings.weight".into(), &[config.vocab_size, h], false)?,
            position: r.tensor(
                "bert.embeddings.position_embeddings.weight".into(),
                &[config.max_position_embeddings, h],
                false,
            )?,
            token_type: r.tensor(
                "bert.embeddings.token_type_embeddings.weight".into(),
                &[config.type_vocab_size, h],
                false,
            )?,
            norm: r.norm("bert.embeddings", h, false)?,
        };
        let first_trainable = config.num_hidden_layers - trainable_layers;
        let mut blocks = Vec::with_capacity(config.num_hidden_layers);
        for i in 0..config.num_hidden_layers {
            let t = i >= first_trainable;
            let p = format!("bert.encoder.layer.{i}");
            blocks.push(Block {
                query: r.linear(&format!("{p}.attention.self.query"), h, h, t)?,
                key: r.linear(&format!("{p}.attention.self.key"), h, h, t)?,
                value: r.linear(&format!("{p}.attention.self.value"), h, h, t)?,
                attn_out: r.linear(&format!("{p}.attention.output.dense"), h, h, t)?,
                attn_norm: r.norm(&format!("{p}.attention.output"), h, t)?,
                intermediate: r.linear(&format!("{p}.intermediate.dense"), h, config.intermediate_size, t)?,
                output: r.linear(&format!("{p}.output.dense"), config.intermediate_size, h, t)?,
                out_norm: r.norm(&format!("{p}.output"), h, t)?,
            });
        }
        Ok(Self {
            config,
            embeddings,
            blocks,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    /// Index of the lowest block with trainable weights (== `num_layers`
    /// when the encoder is fully frozen).
    pub fn first_trainable_block(&self, store: &ParamStore) -> usize {
        self.blocks
            .iter()
            .position(|b| store.is_trainable(b.query.weight))
            .unwrap_or(self.blocks.len())
    }

    /// Parameter names belonging to block `i`.
    pub fn block_prefix(i: usize) -> String {
        format!("bert.encoder.layer.{i}.")
    }

    fn embed(&self, store: &ParamStore, ids: &[u32]) -> Array2<f64> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let mut x = store.mat(self.embeddings.word).select(Axis(0), &idx);
        x += &store.mat(self.embeddings.position).slice(s![..ids.len(), ..]);
        x += &store.mat(self.embeddings.token_type).row(0);
        self.embeddings.norm.forward(store, x.view()).0
    }

    /// Final-layer hidden states `(len, hidden)` for unpadded `ids`. Blocks
    /// at or above `cache_from` keep their activations for [`Self::backward`].
    pub fn forward(&self, store: &ParamStore, ids: &[u32], cache_from: usize) -> (Array2<f64>, EncoderTrace) {
        let mut x = self.embed(store, ids);
        let mut caches = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, cache) = self.block_forward(store, block, x);
            if i >= cache_from {
                caches.push(cache);
            }
            x = out;
        }
        (
            x,
            EncoderTrace {
                first_cached: cache_from,
                blocks: caches,
            },
        )
    }

    fn block_forward(&self, store: &ParamStore, b: &Block, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
        let heads = self.config.num_attention_heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = b.query.forward(store, x.view());
        let k = b.key.forward(store, x.view());
        let v = b.value.forward(store, x.view());
        let mut context = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let attended = b.attn_out.forward(store, context.view()) + &x;
        let (h1, attn_norm) = b.attn_norm.forward(store, attended.view());
        let inter_pre = b.intermediate.forward(store, h1.view());
        let inter = inter_pre.mapv(gelu);
        let out = b.output.forward(store, inter.view()) + &h1;
        let (y, out_norm) = b.out_norm.forward(store, out.view());
        (
            y,
            BlockCache {
                input: x,
                q,
                k,
                v,
                probs,
                context,
                attn_norm,
                h1,
                inter_pre,
                inter,
                out_norm,
            },
        )
    }

    /// Backpropagates `d_hidden` (gradient of the final hidden states)
    /// through the cached blocks, accumulating into `grads`.
    pub fn backward(&self, store: &ParamStore, grads: &mut Gradients, trace: &EncoderTrace, d_hidden: Array2<f64>) {
        let mut dy = d_hidden;
        for (offset, cache) in trace.blocks.iter().enumerate().rev() {
            let block = &self.blocks[trace.first_cached + offset];
            let need_input = offset > 0;
            dy = self.block_backward(store, grads, block, cache, dy.view(), need_input);
        }
    }

    fn block_backward(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        b: &Block,
        c: &BlockCache,
        dy: ArrayView2<f64>,
        need_input: bool,
    ) -> Array2<f64> {
        let heads = self.config.num_attention_heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let d_out_sum = b.out_norm.backward(store, grads, &c.out_norm, dy);
        let d_inter = b
            .output
            .backward(store, grads, c.inter.view(), d_out_sum.view(), true)
            .unwrap();
        let d_inter_pre = d_inter * &c.inter_pre.mapv(gelu_grad);
        let mut d_h1 = b
            .intermediate
            .backward(store, grads, c.h1.view(), d_inter_pre.view(), true)
            .unwrap();
        d_h1 += &d_out_sum;

        let d_attended = b.attn_norm.backward(store, grads, &c.attn_norm, d_h1.view());
        let d_context = b
            .attn_out
            .backward(store, grads, c.context.view(), d_attended.view(), true)
            .unwrap();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, p) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_ctx_h = d_context.slice(cols);
            let dp = d_ctx_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
            let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (dp - &row_dot) * p * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let _ = heads;
        let x = c.input.view();
        let dx_q = b.query.backward(store, grads, x, dq.view(), need_input);
        let dx_k = b.key.backward(store, grads, x, dk.view(), need_input);
        let dx_v = b.value.backward(store, grads, x, dv.view(), need_input);
        if !need_input {
            return Array2::zeros((0, 0));
        }
        let mut dx = d_attended;
        dx += &dx_q.unwrap();
        dx += &dx_k.unwrap();
        dx += &dx_v.unwrap();
        dx
    }
}

/// Finds a checkpoint directory for `id`: an existing path, then
/// `$DRUGSENT_CHECKPOINT_DIR/<id>`, then the local Hugging Face hub cache
/// (`$HF_HOME/hub` or `~/.cache/huggingface/hub`). Nothing is downloaded.
pub fn resolve_checkpoint(id: &str) -> Result<PathBuf, ModelError> {
    let mut searched = Vec::new();
    let direct = PathBuf::from(id);
    if is_checkpoint_dir(&direct) {
        return Ok(direct);
    }
    searched.push(direct);
    if let Some(root) = std::env::var_os(CHECKPOINT_DIR_ENV) {
        let root = PathBuf::from(root);
        for candidate in [root.join(id), root.join(id.replace('/', "--"))] {
            if is_checkpoint_dir(&candidate) {
                return Ok(candidate);
            }
            searched.push(candidate);
        }
    }
    let hub = std::env::var_os("HF_HOME")
        .map(|h| PathBuf::from(h).join("hub"))
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache/huggingface/hub")));
    if let Some(hub) = hub {
        let snapshots = hub.join(format!("models--{}", id.replace('/', "--"))).join("snapshots");
        if let Ok(entries) = std::fs::read_dir(&snapshots) {
            let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            dirs.sort();
            if let Some(found) = dirs.into_iter().find(|d| is_checkpoint_dir(d)) {
                return Ok(found);
            }
        }
        searched.push(snapshots);
    }
    Err(ModelError::CheckpointUnavailable {
        id: id.to_owned(),
        searched: searched
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", "),
    })
}

fn is_checkpoint_dir(dir: &Path) -> bool {
    ["config.json", "vocab.txt", "model.safetensors"]
        .iter()
        .all(|f| dir.join(f).is_file())
}

/// Loads `model.safetensors` from a published checkpoint, accepting either
/// bare or `bert.`-prefixed names and the legacy `gamma`/`beta` spelling.
pub fn pretrained_source(dir: &Path) -> Result<impl FnMut(&str, &[usize]) -> Result<ArrayD<f64>, ModelError>, ModelError> {
    let path = dir.join("model.safetensors");
    let mut tensors: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    for (name, value) in safetensors::read(&path)? {
        let name = name.strip_prefix("bert.").unwrap_or(&name).to_owned();
        let name = if let Some(stem) = name.strip_suffix(".gamma") {
            format!("{stem}.weight")
        } else if let Some(stem) = name.strip_suffix(".beta") {
            format!("{stem}.bias")
        } else {
            name
        };
        tensors.insert(name, value);
    }
    Ok(move |name: &str, shape: &[usize]| {
        let key = name.strip_prefix("bert.").unwrap_or(name);
        match tensors.remove(key) {
            Some(t) if t.shape() == shape => Ok(t),
            Some(t) => Err(ModelError::Checkpoint {
                path: path.clone(),
                message: format!("{name}: expected shape {shape:?}, found {:?}", t.shape()),
            }),
            None => Err(ModelError::Checkpoint {
                path: path.clone(),
                message: format!("missing tensor {key}"),
            }),
        }
    })
}

/// Deterministic small-uniform initialization; layer-norm scales start at 1.
pub fn random_source<R: rand::Rng>(rng: &mut R) -> impl FnMut(&str, &[usize]) -> Result<ArrayD<f64>, ModelError> + '_ {
    move |name: &str, shape: &[usize]| {
        Ok(if name.ends_with("LayerNorm.weight") {
            ArrayD::ones(IxDyn(shape))
        } else if name.ends_with(".bias") {
            ArrayD::zeros(IxDyn(shape))
        } else {
            ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-0.05..0.05))
        })
    }
}
