//! Convolutional classifier over static word embeddings:
//! embedding lookup → one 1-D convolution per width → global max pooling →
//! concatenation → dense + ReLU → 3 logits.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::dropout::Dropout;
use crate::nn::{max_pool_rows, relu, Gradients, Linear, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct CnnNet {
    pub embedding: ParamId,
    pub convs: Vec<(usize, Linear)>,
    pub hidden: Linear,
    pub classifier: Linear,
    pub pad_index: u32,
    pub train_embedding: bool,
}

struct CnnCache {
    ids: Vec<u32>,
    windows: Vec<Array2<f64>>,
    argmax: Vec<Vec<usize>>,
    pooled: Array1<f64>,
    dropout: Option<Array1<f64>>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
}

impl CnnNet {
    /// Registers parameters. `embedding` is the full table including the pad
    /// and unk rows.
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        embedding: Array2<f64>,
        pad_index: u32,
        train_embedding: bool,
        widths: &[usize],
        filters: usize,
        hidden_size: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let dim = embedding.ncols();
        let embedding = store.add("embedding.weight", embedding.into_dyn(), train_embedding);
        let convs = widths
            .iter()
            .map(|&w| (w, Linear::init(store, &format!("conv.{w}"), w * dim, filters, true, rng)))
            .collect::<Vec<_>>();
        let pooled = filters * widths.len();
        let hidden = Linear::init(store, "hidden", pooled, hidden_size, true, rng);
        let classifier = Linear::init(store, "classifier", hidden_size, classes, true, rng);
        Self {
            embedding,
            convs,
            hidden,
            classifier,
            pad_index,
            train_embedding,
        }
    }

    /// Length of the concatenated pooled feature vector.
    pub fn pooled_len(&self, store: &ParamStore) -> usize {
        self.convs.iter().map(|(_, c)| c.outputs(store)).sum()
    }

    pub fn vocab_rows(&self, store: &ParamStore) -> usize {
        store.mat(self.embedding).nrows()
    }

    pub fn dimension(&self, store: &ParamStore) -> usize {
        store.mat(self.embedding).ncols()
    }

    fn windows(x: ArrayView2<f64>, width: usize) -> Array2<f64> {
        let (len, dim) = x.dim();
        let count = len + 1 - width;
        let mut u = Array2::zeros((count, width * dim));
        for t in 0..count {
            for k in 0..width {
                u.slice_mut(s![t, k * dim..(k + 1) * dim]).assign(&x.row(t + k));
            }
        }
        u
    }

    fn forward_cached(&self, store: &ParamStore, ids: &[u32], dropout: &mut Dropout<'_>) -> (Array1<f64>, CnnCache) {
        let table = store.mat(self.embedding);
        let x = table.select(Axis(0), &ids.iter().map(|&i| i as usize).collect::<Vec<_>>());
        let mut pooled = Vec::with_capacity(self.pooled_len(store));
        let mut windows = Vec::with_capacity(self.convs.len());
        let mut argmax = Vec::with_capacity(self.convs.len());
        for (width, conv) in &self.convs {
            let u = Self::windows(x.view(), *width);
            let out = conv.forward(store, u.view());
            let (best, arg) = max_pool_rows(out.view());
            pooled.extend(best);
            windows.push(u);
            argmax.push(arg);
        }
        let pooled = Array1::from(pooled);
        let (dropped, mask) = dropout.apply(pooled.clone());
        let hidden_pre = self.hidden.forward_vec(store, dropped.view());
        let hidden = hidden_pre.mapv(relu);
        let logits = self.classifier.forward_vec(store, hidden.view());
        let cache = CnnCache {
            ids: ids.to_vec(),
            windows,
            argmax,
            pooled,
            dropout: mask,
            hidden_pre,
            hidden,
        };
        (logits, cache)
    }

    pub fn logits(&self, store: &ParamStore, ids: &[u32]) -> Array1<f64> {
        self.forward_cached(store, ids, &mut Dropout::Off).0
    }

    /// Forward + backward for one example; returns the logits and
    /// accumulates `dL/dθ` given `dL/dlogits` from `loss_grad`.
    pub fn forward_backward(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        ids: &[u32],
        dropout: &mut Dropout<'_>,
        loss_grad: &mut dyn FnMut(&Array1<f64>) -> Array1<f64>,
    ) -> Array1<f64> {
        let (logits, cache) = self.forward_cached(store, ids, dropout);
        let dlogits = loss_grad(&logits);
        let dhidden = self.classifier.backward_vec(store, grads, cache.hidden.view(), dlogits.view());
        let dhidden_pre = &dhidden * &cache.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dropped = match &cache.dropout {
            Some(m) => &cache.pooled * m,
            None => cache.pooled.clone(),
        };
        let mut dpooled = self.hidden.backward_vec(store, grads, dropped.view(), dhidden_pre.view());
        if let Some(m) = &cache.dropout {
            dpooled *= m;
        }

        let dim = self.dimension(store);
        let want_embedding = grads.wants(self.embedding);
        let mut dx = want_embedding.then(|| Array2::<f64>::zeros((ids.len(), dim)));
        let mut offset = 0;
        for (((width, conv), u), arg) in self.convs.iter().zip(&cache.windows).zip(&cache.argmax) {
            let filters = arg.len();
            let dz = dpooled.slice(s![offset..offset + filters]);
            offset += filters;
            if let Some(mut gw) = grads.mat_mut(conv.weight) {
                for (f, (&t, &d)) in arg.iter().zip(dz.iter()).enumerate() {
                    gw.row_mut(f).scaled_add(d, &u.row(t));
                }
            }
            if let Some(mut gb) = grads.vec_mut(conv.bias) {
                gb += &dz;
            }
            if let Some(dx) = dx.as_mut() {
                let w = store.mat(conv.weight);
                for (f, (&t, &d)) in arg.iter().zip(dz.iter()).enumerate() {
                    for k in 0..*width {
                        dx.row_mut(t + k)
                            .scaled_add(d, &w.slice(s![f, k * dim..(k + 1) * dim]));
                    }
                }
            }
        }
        if let (Some(dx), Some(mut ge)) = (dx, grads.mat_mut(self.embedding)) {
            for (pos, &id) in cache.ids.iter().enumerate() {
                if id != self.pad_index {
                    ge.row_mut(id as usize).scaled_add(1.0, &dx.row(pos));
                }
            }
        }
        logits
    }
}
