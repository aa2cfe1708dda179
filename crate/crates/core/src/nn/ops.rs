//! Dense building blocks with hand-written backward passes. Activations are
//! row-major `(positions, features)` matrices.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::store::{Gradients, ParamId, ParamStore};

/// Affine map `y = x Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Registers a Glorot-uniform weight and zero bias.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let weight = glorot_uniform(rng, outputs, inputs);
        Self {
            weight: store.add(format!("{prefix}.weight"), weight.into_dyn(), trainable),
            bias: store.add(format!("{prefix}.bias"), Array1::zeros(outputs).into_dyn(), trainable),
        }
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.mat(self.weight).nrows()
    }

    pub fn inputs(&self, store: &ParamStore) -> usize {
        store.mat(self.weight).ncols()
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&store.mat(self.weight).t());
        y += &store.vec(self.bias);
        y
    }

    pub fn forward_vec(&self, store: &ParamStore, x: ArrayView1<f64>) -> Array1<f64> {
        store.mat(self.weight).dot(&x) + store.vec(self.bias)
    }

    /// Accumulates parameter gradients and returns `dL/dx` when asked for.
    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        if let Some(mut gw) = grads.mat_mut(self.weight) {
            gw += &dy.t().dot(&x);
        }
        if let Some(mut gb) = grads.vec_mut(self.bias) {
            gb += &dy.sum_axis(Axis(0));
        }
        need_input_grad.then(|| dy.dot(&store.mat(self.weight)))
    }

    pub fn backward_vec(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        x: ArrayView1<f64>,
        dy: ArrayView1<f64>,
    ) -> Array1<f64> {
        if let Some(mut gw) = grads.mat_mut(self.weight) {
            Zip::from(gw.rows_mut()).and(&dy).for_each(|mut row, &d| {
                row.scaled_add(d, &x);
            });
        }
        if let Some(mut gb) = grads.vec_mut(self.bias) {
            gb += &dy;
        }
        store.mat(self.weight).t().dot(&dy)
    }
}

pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

/// Layer normalization over the feature axis.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let mut normalized = &x - &mean.view().insert_axis(Axis(1));
        let var = normalized.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        normalized *= &inv_std.view().insert_axis(Axis(1));
        let mut y = &normalized * &store.vec(self.gamma);
        y += &store.vec(self.beta);
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
        cache: &LayerNormCache,
        dy: ArrayView2<f64>,
    ) -> Array2<f64> {
        if let Some(mut gg) = grads.vec_mut(self.gamma) {
            gg += &(&dy * &cache.normalized).sum_axis(Axis(0));
        }
        if let Some(mut gb) = grads.vec_mut(self.beta) {
            gb += &dy.sum_axis(Axis(0));
        }
        let d = dy.ncols() as f64;
        let dxhat = &dy * &store.vec(self.gamma);
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.normalized).sum_axis(Axis(1)) / d;
        let mut dx = dxhat;
        Zip::from(dx.rows_mut())
            .and(cache.normalized.rows())
            .and(&mean_dxhat)
            .and(&mean_dxhat_xhat)
            .and(&cache.inv_std)
            .for_each(|mut row, xhat, &m1, &m2, &inv| {
                Zip::from(&mut row).and(&xhat).for_each(|g, &xh| {
                    *g = inv * (*g - m1 - xh * m2);
                });
            });
        dx
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Row-wise softmax, in place.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Cross-entropy of `logits` against `target`, with `dL/dlogits`.
pub fn cross_entropy(logits: ArrayView1<f64>, target: usize) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_sum = logits.mapv(|v| (v - max).exp()).sum().ln() + max;
    let loss = log_sum - logits[target];
    let mut grad = logits.mapv(|v| (v - log_sum).exp());
    grad[target] -= 1.0;
    (loss, grad)
}

/// Column-wise max over rows with the winning row per column (first on ties).
pub fn max_pool_rows(m: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let cols = m.ncols();
    let mut best = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut arg = vec![0usize; cols];
    for (r, row) in m.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    (best, arg)
}

/// Columns `[start, start + width)` of a matrix.
pub fn col_block(m: ArrayView2<f64>, start: usize, width: usize) -> ArrayView2<f64> {
    m.slice_move(s![.., start..start + width])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        let p = softmax(arr1(&[0.0, 0.0, 0.0]).view());
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        // exp(ln 2) / (2 + 1 + 1) = 0.5
        let p = softmax(arr1(&[2f64.ln(), 0.0, 0.0]).view());
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.25, epsilon = 1e-15);
        let p = softmax(arr1(&[1000.0, -1000.0, 0.0]).view());
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), numeric, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(gelu(1.0), 0.841_344_746_068_542_9, epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = arr1(&[0.2, -1.0, 0.7]);
        let (loss, grad) = cross_entropy(logits.view(), 2);
        let p = softmax(logits.view());
        assert_abs_diff_eq!(loss, -p[2].ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad[2], p[2] - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(grad.sum(), 0.0, epsilon = 1e-12);
    }

    fn numeric_check(
        store: &mut ParamStore,
        id: ParamId,
        analytic: &ndarray::ArrayD<f64>,
        loss: &dyn Fn(&ParamStore) -> f64,
    ) {
        let h = 1e-6;
        for i in 0..analytic.len() {
            let orig = store.param(id).value.as_slice().unwrap()[i];
            store.param_mut(id).value.as_slice_mut().unwrap()[i] = orig + h;
            let up = loss(store);
            store.param_mut(id).value.as_slice_mut().unwrap()[i] = orig - h;
            let down = loss(store);
            store.param_mut(id).value.as_slice_mut().unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert_abs_diff_eq!(analytic.as_slice().unwrap()[i], numeric, epsilon = 1e-7);
        }
    }

    #[test]
    fn layer_norm_and_linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let lin = Linear::init(&mut store, "lin", 4, 5, true, &mut rng);
        let gamma = store.add("ln.g", Array1::from_shape_simple_fn(5, || rng.random_range(0.5..1.5)).into_dyn(), true);
        let beta = store.add("ln.b", Array1::from_shape_simple_fn(5, || rng.random_range(-0.5..0.5)).into_dyn(), true);
        let ln = LayerNorm { gamma, beta, eps: 1e-12 };
        let x = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-1.0..1.0));
        let loss = |s: &ParamStore| -> f64 {
            let h = lin.forward(s, x.view());
            let (y, _) = ln.forward(s, h.view());
            (&y * &w).sum()
        };
        let mut grads = Gradients::zeros_like(&store);
        let h = lin.forward(&store, x.view());
        let (_, cache) = ln.forward(&store, h.view());
        let dh = ln.backward(&store, &mut grads, &cache, w.view());
        let dx = lin.backward(&store, &mut grads, x.view(), dh.view(), true).unwrap();
        for id in [lin.weight, lin.bias, gamma, beta] {
            let g = grads.get(id).unwrap().clone();
            numeric_check(&mut store, id, &g, &loss);
        }
        // input gradient
        let hstep = 1e-6;
        for idx in [(0, 0), (1, 2), (2, 3)] {
            let mut xp = x.clone();
            xp[idx] += hstep;
            let mut xm = x.clone();
            xm[idx] -= hstep;
            let f = |xx: &Array2<f64>| {
                let h = lin.forward(&store, xx.view());
                (&ln.forward(&store, h.view()).0 * &w).sum()
            };
            assert_abs_diff_eq!(dx[idx], (f(&xp) - f(&xm)) / (2.0 * hstep), epsilon = 1e-7);
        }
    }

    #[test]
    fn max_pool_first_winner_on_ties() {
        let m = ndarray::arr2(&[[1.0, 5.0], [3.0, 5.0], [3.0, 0.0]]);
        let (v, arg) = max_pool_rows(m.view());
        assert_eq!(v.to_vec(), vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }
}
