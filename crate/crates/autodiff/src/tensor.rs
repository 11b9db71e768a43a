//! Dense row-major `f64` tensors and named parameter sets.

use std::collections::HashMap;

use crate::error::AutodiffError;

/// A dense, row-major tensor of `f64` values.
///
/// A scalar has an empty shape and exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::InvalidTensor(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for rank-0 tensors and single-element vectors.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Identifier of a trainable parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors (the model's θ).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// `self -= scale * grads`, elementwise over every parameter.
    pub fn sub_scaled(&mut self, grads: &GradStore, scale: f64) {
        for (p, g) in self.tensors.iter_mut().zip(grads.iter()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= scale * gv;
            }
        }
    }

    /// Bit-level fingerprint of all values; used to check that parameters were not mutated.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            n.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Gradients for every parameter of a [`ParamSet`], index-aligned with it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore {
    grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params.tensors.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.grads.iter_mut()
    }

    /// Global L2 norm over all gradient values.
    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Elementwise accumulation. Both stores must come from the same parameter set.
    pub fn add_assign(&mut self, other: &GradStore) {
        debug_assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }

    /// Checks that shapes line up one-to-one with `params`.
    pub fn matches(&self, params: &ParamSet) -> bool {
        self.grads.len() == params.len()
            && self
                .grads
                .iter()
                .zip(&params.tensors)
                .all(|(g, p)| g.shape() == p.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_len() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rank(), 2);
        assert!(Tensor::scalar(1.0).is_scalar());
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(p.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut p = ParamSet::new();
        let id = p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let before = p.fingerprint();
        p.get_mut(id).data_mut()[0] = 1.5;
        assert_ne!(before, p.fingerprint());
    }
}
