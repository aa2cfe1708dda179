use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2};
use sha2::{Digest, Sha256};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub trainable: bool,
}

/// Named, ordered collection of model parameters. Each parameter carries a
/// trainable flag; the optimizer only ever touches trainable entries.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name: parameter layouts are fixed by code.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>, trainable: bool) -> ParamId {
        let name = name.into();
        let id = self.params.len();
        let previous = self.by_name.insert(name.clone(), id);
        assert!(previous.is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is not a matrix")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("parameter is not a vector")
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of scalar values in trainable parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and the bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }

    pub fn snapshot_trainable(&self) -> Vec<Option<ArrayD<f64>>> {
        self.params
            .iter()
            .map(|p| p.trainable.then(|| p.value.clone()))
            .collect()
    }

    pub fn restore_trainable(&mut self, snapshot: &[Option<ArrayD<f64>>]) {
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if let Some(v) = s {
                p.value.assign(v);
            }
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient buffers aligned with a [`ParamStore`]. Frozen parameters have no
/// buffer, which backward passes use to skip work.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .params
                .iter()
                .map(|p| p.trainable.then(|| ArrayD::zeros(p.value.raw_dim())))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<f64>> {
        self.grads[id.0].as_ref()
    }

    pub fn wants(&self, id: ParamId) -> bool {
        self.grads[id.0].is_some()
    }

    pub fn mat_mut(&mut self, id: ParamId) -> Option<ArrayViewMut2<'_, f64>> {
        self.grads[id.0]
            .as_mut()
            .map(|g| g.view_mut().into_dimensionality::<Ix2>().expect("gradient is not a matrix"))
    }

    pub fn vec_mut(&mut self, id: ParamId) -> Option<ArrayViewMut1<'_, f64>> {
        self.grads[id.0]
            .as_mut()
            .map(|g| g.view_mut().into_dimensionality::<Ix1>().expect("gradient is not a vector"))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ArrayD<f64>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
