use ndarray::{ArrayD, Zip};

use super::store::{Gradients, ParamStore};

/// Adam with bias correction. Moment buffers exist only for trainable
/// parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(ArrayD<f64>, ArrayD<f64>)>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: store
                .iter()
                .map(|(_, p)| {
                    p.trainable
                        .then(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())))
                })
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (id, g) in grads.iter() {
            let Some((m, v)) = self.moments[id.index()].as_mut() else {
                continue;
            };
            let param = store.param_mut(id);
            if !param.trainable {
                continue;
            }
            Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let a = store.add("a", arr1(&[1.0, -1.0]).into_dyn(), true);
        let b = store.add("b", arr1(&[3.0]).into_dyn(), false);
        let mut grads = Gradients::zeros_like(&store);
        grads.vec_mut(a).unwrap().assign(&arr1(&[0.5, -2.0]));
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &grads);
        // After one bias-corrected step each coordinate moves by ~lr * sign(g).
        let va = &store.param(a).value;
        assert!((va[[0]] - 0.9).abs() < 1e-6);
        assert!((va[[1]] + 0.9).abs() < 1e-6);
        assert_eq!(store.param(b).value[[0]], 3.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let a = store.add("a", arr1(&[4.0]).into_dyn(), true);
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..2000 {
            let mut grads = Gradients::zeros_like(&store);
            let x = store.param(a).value[[0]];
            grads.vec_mut(a).unwrap()[0] = 2.0 * (x - 1.0);
            adam.step(&mut store, &grads);
        }
        assert!((store.param(a).value[[0]] - 1.0).abs() < 1e-3);
    }
}
