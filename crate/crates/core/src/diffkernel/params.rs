use std::collections::BTreeMap;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A named learnable tensor. The first `pinned_rows` rows are constants
/// (held at zero) and never receive updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub pinned_rows: usize,
}

impl Param {
    /// Number of pinned scalar entries at the front of `value`.
    pub fn pinned_len(&self) -> usize {
        self.pinned_rows * self.value.cols()
    }
}

/// Ordered collection of learnable tensors addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, pinned_rows: usize) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.into(),
            value,
            pinned_rows,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of free (non-pinned) scalars.
    pub fn free_len(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.value.len() - p.pinned_len())
            .sum()
    }

    /// Zeroes every pinned entry.
    pub fn repin(&mut self) {
        for p in &mut self.params {
            let n = p.pinned_len();
            p.value.data_mut()[..n].iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Sum of squares over free entries.
    pub fn free_sum_squares(&self) -> f64 {
        self.params
            .iter()
            .map(|p| {
                p.value.data()[p.pinned_len()..]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Gradient accumulator keyed by parameter. Missing entries are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// Gradient for `id`, materialising zeros with the given shape when absent.
    pub fn get_or_zeros(&self, id: ParamId, like: &Tensor) -> Tensor {
        self.grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn accumulate(&mut self, id: ParamId, grad: Tensor) {
        match self.grads.get_mut(&id) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    /// Adds another accumulator into this one.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            self.accumulate(id, g);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.grads.iter_mut().map(|(k, v)| (*k, v))
    }

    /// Zeroes the gradient of every pinned entry in `params`.
    pub fn zero_pinned(&mut self, params: &ParamSet) {
        for (id, g) in self.grads.iter_mut() {
            let n = params.get(*id).pinned_len();
            g.data_mut()[..n].iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Global L2 norm over all stored gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .map(Tensor::sum_squares)
            .sum::<f64>()
            .sqrt()
    }
}
