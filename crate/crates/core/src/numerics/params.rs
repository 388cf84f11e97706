use std::collections::HashMap;

use rand::Rng;

use super::tensor::{Real, Tensor};
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        Self(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId, NumericsError> {
        if self.lookup.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_requires_grad(true));
        self.lookup.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), values)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copy values from another store with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<(), NumericsError> {
        for (id, name, src) in other.iter() {
            let own = self
                .id(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
            if own != id || self.tensors[own.0].shape() != src.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "copy_values_from",
                    left: self.tensors[own.0].shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            self.tensors[own.0].values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0)?.as_deref()
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        match &mut self.slots[id.0] {
            Some(slot) => {
                for (s, &g) in slot.iter_mut().zip(grad) {
                    *s = *s + g;
                }
            }
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Sum `other` into `self` in parameter order.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for slot in self.slots.iter_mut().flatten() {
            slot.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|s| s.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(T::from_f64_lossy(max_norm / norm));
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|s| (ParamId(i), s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add_zeros("w", &[2]).unwrap();
        assert!(matches!(store.add_zeros("w", &[2]), Err(NumericsError::DuplicateParam(_))));
    }

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let mut a = ParamStore::<f64>::new();
        let mut b = ParamStore::<f64>::new();
        let ia = a.add_uniform("w", &[10, 10], 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ib = b.add_uniform("w", &[10, 10], 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.get(ia).values(), b.get(ib).values());
        assert!(a.get(ia).values().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = Gradients::<f64>::new(2);
        g.accumulate(ParamId(0), &[3.0, 4.0]);
        g.accumulate(ParamId(1), &[12.0]);
        let before = g.clip_global_norm(0.2);
        assert!((before - 13.0).abs() < 1e-12);
        assert!(g.global_norm() <= 0.2 + 1e-9);
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let mut g = Gradients::<f64>::new(1);
        g.accumulate(ParamId(0), &[0.05, 0.05]);
        let copy = g.clone();
        g.clip_global_norm(0.2);
        assert_eq!(g, copy);
    }
}
