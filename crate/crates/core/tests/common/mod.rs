#![allow(dead_code)]

use drugsent::corpus::SentimentClass;
use drugsent::encoders::{EncodedExample, StaticEmbeddingTable, StaticVocab, TokenizerConfig, WordPieceTokenizer};
use drugsent::models::{build_cnn, build_encoder, random_source, BertConfig, Model, ModelConfig, ModelKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pad id of [`mini_cnn`] models.
pub const CNN_PAD: u32 = 12;

pub fn mini_cnn(seed: u64) -> Model {
    cnn_with(seed, 2, 5)
}

/// Miniature vocabulary and embeddings with the default filter and hidden sizes.
pub fn default_width_cnn(seed: u64) -> Model {
    let defaults = ModelConfig::new(ModelKind::CnnStatic);
    cnn_with(seed, defaults.filters_per_width, defaults.hidden_size)
}

fn cnn_with(seed: u64, filters: usize, hidden: usize) -> Model {
    let tokens: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let vocab = StaticVocab::from_tokens(tokens).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Array2::from_shape_simple_fn((vocab.rows(), 6), || rng.random_range(-1.0..1.0));
    vectors.row_mut(vocab.pad_index() as usize).fill(0.0);
    let mut config = ModelConfig::new(ModelKind::CnnStatic);
    config.filter_widths = vec![1, 2];
    config.filters_per_width = filters;
    config.hidden_size = hidden;
    config.max_len = 7;
    config.seed = seed;
    build_cnn(config, StaticEmbeddingTable { vocab, vectors }).unwrap()
}

pub fn tiny_bert(layers: usize, trainable: usize, seed: u64) -> Model {
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().map(|s| s.to_string()).collect();
    vocab.extend((0..16).map(|i| format!("t{i}")));
    let tokenizer = WordPieceTokenizer::new(vocab, TokenizerConfig::default()).unwrap();
    let bert = BertConfig {
        vocab_size: 20,
        hidden_size: 8,
        num_hidden_layers: layers,
        num_attention_heads: 2,
        intermediate_size: 12,
        max_position_embeddings: 16,
        type_vocab_size: 2,
        layer_norm_eps: 1e-12,
        hidden_act: "gelu".into(),
    };
    let kind = if trainable == 0 {
        ModelKind::FrozenEncoderHead
    } else {
        ModelKind::FinetuneGeneral
    };
    let mut config = ModelConfig::new(kind);
    config.trainable_encoder_layers = trainable;
    config.max_len = 10;
    config.hidden_size = 6;
    config.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut source = random_source(&mut rng);
    let mut model = build_encoder(config, bert, tokenizer, &mut source).unwrap();
    // Larger weights than the default init so that gradients are not tiny.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    for (_, p) in model.store.iter_mut() {
        if p.name.ends_with(".weight") && !p.name.contains("LayerNorm") {
            p.value.mapv_inplace(|_| rng.random_range(-0.6..0.6));
        }
    }
    model
}

pub fn example(ids: &[u32], max_len: usize, pad: u32, label: SentimentClass) -> EncodedExample {
    let mut token_ids = ids.to_vec();
    let mut attention_mask = vec![1u8; ids.len()];
    token_ids.resize(max_len, pad);
    attention_mask.resize(max_len, 0);
    EncodedExample {
        token_ids,
        attention_mask,
        label: Some(label),
    }
}

