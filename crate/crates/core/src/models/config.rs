use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::DEFAULT_MAX_LEN;
use crate::error::ModelError;

pub const NUM_CLASSES: usize = 3;
pub const GENERAL_CHECKPOINT: &str = "bert-base-cased";
pub const CLINICAL_CHECKPOINT: &str = "emilyalsentzer/Bio_ClinicalBERT";

/// The four compared architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Pretrained encoder with every encoder weight frozen; only the head trains.
    FrozenEncoderHead,
    /// Convolutions over static word embeddings.
    CnnStatic,
    /// General-domain encoder, top blocks fine-tuned.
    FinetuneGeneral,
    /// Clinical-domain encoder, top blocks fine-tuned.
    FinetuneClinical,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        Self::FrozenEncoderHead,
        Self::CnnStatic,
        Self::FinetuneGeneral,
        Self::FinetuneClinical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FrozenEncoderHead => "frozen_encoder_head",
            Self::CnnStatic => "cnn_static",
            Self::FinetuneGeneral => "finetune_general",
            Self::FinetuneClinical => "finetune_clinical",
        }
    }

    pub fn uses_encoder(self) -> bool {
        self != Self::CnnStatic
    }

    pub fn is_finetuned(self) -> bool {
        matches!(self, Self::FinetuneGeneral | Self::FinetuneClinical)
    }

    pub fn default_checkpoint(self) -> Option<&'static str> {
        match self {
            Self::FrozenEncoderHead | Self::FinetuneGeneral => Some(GENERAL_CHECKPOINT),
            Self::FinetuneClinical => Some(CLINICAL_CHECKPOINT),
            Self::CnnStatic => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Encoder checkpoint: a directory path or an identifier resolved
    /// against the local checkpoint cache.
    pub checkpoint_id: Option<String>,
    /// word2vec-format file for `cnn_static`.
    pub embeddings: Option<String>,
    pub filters_per_width: usize,
    pub filter_widths: Vec<usize>,
    pub hidden_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub trainable_encoder_layers: usize,
    /// CNN only: keep the pretrained embedding rows fixed.
    pub freeze_embeddings: bool,
    /// Dropout on the pooled features during training.
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            checkpoint_id: kind.default_checkpoint().map(str::to_owned),
            embeddings: None,
            filters_per_width: 100,
            filter_widths: vec![1, 2, 3, 4, 5],
            hidden_size: 100,
            max_len: DEFAULT_MAX_LEN,
            num_classes: NUM_CLASSES,
            trainable_encoder_layers: if kind.is_finetuned() { 4 } else { 0 },
            freeze_embeddings: false,
            dropout: 0.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.num_classes != NUM_CLASSES {
            return fail(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.hidden_size == 0 {
            return fail("hidden_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        match self.kind {
            ModelKind::CnnStatic => {
                if self.max_len == 0 {
                    return fail("max_len must be positive".into());
                }
                if self.filters_per_width == 0 {
                    return fail("filters_per_width must be positive".into());
                }
                if self.filter_widths.is_empty() {
                    return fail("filter_widths is empty".into());
                }
                if let Some(w) = self.filter_widths.iter().find(|&&w| w == 0 || w > self.max_len) {
                    return fail(format!("filter width {w} must be in 1..={}", self.max_len));
                }
                let mut sorted = self.filter_widths.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != self.filter_widths.len() {
                    return fail("filter_widths contains duplicates".into());
                }
                if self.trainable_encoder_layers != 0 {
                    return fail("trainable_encoder_layers must be 0 for cnn_static".into());
                }
            }
            kind => {
                if self.max_len < 2 {
                    return fail("max_len must be at least 2 for encoder models".into());
                }
                if self.checkpoint_id.is_none() {
                    return fail(format!("{kind} needs a checkpoint_id"));
                }
                let frozen = kind == ModelKind::FrozenEncoderHead;
                if frozen != (self.trainable_encoder_layers == 0) {
                    return fail(format!(
                        "trainable_encoder_layers = {} is invalid for {kind} (0 iff frozen_encoder_head)",
                        self.trainable_encoder_layers
                    ));
                }
            }
        }
        Ok(())
    }
}
