//! Classification head shared by the encoder-based models: a dense layer
//! with ReLU applied at every real token position, max pooling over those
//! positions, then a linear layer to the class logits.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::dropout::Dropout;
use crate::nn::{max_pool_rows, relu, Gradients, Linear, ParamStore};

#[derive(Debug, Clone)]
pub struct EncoderHead {
    pub dense: Linear,
    pub classifier: Linear,
}

pub(crate) struct HeadCache {
    activated: Array2<f64>,
    argmax: Vec<usize>,
    dropped: Array1<f64>,
    mask: Option<Array1<f64>>,
}

impl EncoderHead {
    pub fn register<R: Rng>(store: &mut ParamStore, inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            dense: Linear::init(store, "head.dense", inputs, hidden, true, rng),
            classifier: Linear::init(store, "head.classifier", hidden, classes, true, rng),
        }
    }

    /// `states` holds one row per real (unmasked) position.
    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        states: ArrayView2<f64>,
        dropout: &mut Dropout<'_>,
    ) -> (Array1<f64>, HeadCache) {
        let activated = self.dense.forward(store, states).mapv(relu);
        let (pooled, argmax) = max_pool_rows(activated.view());
        let (dropped, mask) = dropout.apply(pooled);
        let logits = self.classifier.forward_vec(store, dropped.view());
        (
            logits,
            HeadCache {
                activated,
                argmax,
                dropped,
                mask,
            },
        )
    }

    /// Returns the gradient with respect to `states` when `need_states`.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        states: ArrayView2<f64>,
        cache: &HeadCache,
        dlogits: &Array1<f64>,
        need_states: bool,
    ) -> Option<Array2<f64>> {
        let mut dpooled = self
            .classifier
            .backward_vec(store, grads, cache.dropped.view(), dlogits.view());
        if let Some(m) = &cache.mask {
            dpooled *= m;
        }
        let mut dact = Array2::zeros(cache.activated.raw_dim());
        for (f, (&t, &d)) in cache.argmax.iter().zip(dpooled.iter()).enumerate() {
            if cache.activated[[t, f]] > 0.0 {
                dact[[t, f]] = d;
            }
        }
        self.dense.backward(store, grads, states, dact.view(), need_states)
    }
}
