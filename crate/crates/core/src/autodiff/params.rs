//! Named parameter storage, deterministic initialization, and SGD.
//!
//! Parameters live in a [`BTreeMap`] so every iteration (updates, checkpoint
//! writes, gradient reduction) visits names in the same order regardless of
//! insertion order. Initialization draws from a per-parameter RNG seeded by
//! the store seed and a stable hash of the name, so adding or removing one
//! parameter never shifts the values of the others.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// FNV-1a, fixed here because the std hasher is allowed to change between
/// releases and these hashes feed RNG seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer; decorrelates seed/name combinations.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for anything derived from a base seed plus an index, used across the
/// crate wherever per-item RNGs are needed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(base ^ mix(index))
}

/// Seed for a parameter's init RNG from the store seed and its name.
fn param_seed(base: u64, name: &str) -> u64 {
    mix(base ^ fnv1a(name.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    seed: u64,
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, params: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Registers a parameter initialized uniformly in `[-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)]`, where `fan_in` is the first extent for matrices and
    /// the length for vectors.
    pub fn register(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let fan_in = shape[0].max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed(self.seed, name));
        let numel: usize = shape.iter().product();
        let values: Vec<S> = (0..numel).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
        let t = Tensor::new(shape, values)?;
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Registers a parameter with all entries zero (biases).
    pub fn register_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), Tensor::zeros(shape));
        Ok(())
    }

    /// Inserts or replaces a parameter with explicit values (checkpoint
    /// loads, tests).
    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) {
        self.params.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// In-place `theta -= lr * grad` for every entry in `grads`.
    ///
    /// Fails if a gradient names an unregistered parameter or its shape
    /// disagrees with the stored tensor.
    pub fn sgd_step(&mut self, grads: &Gradients<S>, lr: S) -> Result<()> {
        for (name, g) in grads.iter() {
            let t = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            if t.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for '{name}' has shape {:?}, parameter has {:?}",
                    g.shape(),
                    t.shape()
                )));
            }
            for (v, &gv) in t.values_mut().iter_mut().zip(g.values()) {
                *v -= lr * gv;
            }
        }
        Ok(())
    }

    /// True when every stored value is finite.
    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.is_finite())
    }
}

/// Accumulated gradients keyed by parameter name.
///
/// Additive: repeated [`Gradients::add`] calls for one name sum, which is how
/// per-example tapes combine into one batch gradient.
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    grads: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Gradients { grads: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: &[S]) {
        match self.grads.get_mut(name) {
            Some(existing) => {
                for (a, &b) in existing.values_mut().iter_mut().zip(values) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(
                    name.to_string(),
                    Tensor::new(shape.to_vec(), values.to_vec()).expect("gradient shape agrees"),
                );
            }
        }
    }

    /// Ensures `name` is present (as zeros) without changing any sum.
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) {
        if !self.grads.contains_key(name) {
            self.grads.insert(name.to_string(), Tensor::zeros(shape.to_vec()));
        }
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: &Gradients<S>) {
        for (name, t) in other.iter() {
            self.add(name, t.shape(), t.values());
        }
    }

    /// Scales every gradient in place (batch averaging).
    pub fn scale(&mut self, factor: S) {
        for t in self.grads.values_mut() {
            for v in t.values_mut() {
                *v *= factor;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over every entry.
    pub fn l2_norm(&self) -> S {
        let mut total = S::zero();
        for t in self.grads.values() {
            for &v in t.values() {
                total += v * v;
            }
        }
        total.sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    /// Returns the norm observed before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.l2_norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_name_local() {
        let mut a = ParamStore::<f64>::new(7);
        a.register("w", vec![4, 3]).unwrap();
        a.register("b", vec![3]).unwrap();

        let mut b = ParamStore::<f64>::new(7);
        // Different registration order, extra unrelated parameter.
        b.register("extra", vec![2, 2]).unwrap();
        b.register("b", vec![3]).unwrap();
        b.register("w", vec![4, 3]).unwrap();

        assert_eq!(a.get("w").unwrap().values(), b.get("w").unwrap().values());
        assert_eq!(a.get("b").unwrap().values(), b.get("b").unwrap().values());

        let mut c = ParamStore::<f64>::new(8);
        c.register("w", vec![4, 3]).unwrap();
        assert_ne!(a.get("w").unwrap().values(), c.get("w").unwrap().values());
    }

    #[test]
    fn init_bound_follows_fan_in() {
        let mut store = ParamStore::<f64>::new(1);
        store.register("w", vec![16, 8]).unwrap();
        let bound = 1.0 / 4.0;
        for &v in store.get("w").unwrap().values() {
            assert!(v.abs() <= bound, "{v} out of [-{bound}, {bound}]");
        }
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut store = ParamStore::<f64>::new(0);
        store.register("w", vec![2]).unwrap();
        assert!(matches!(store.register("w", vec![2]), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn sgd_step_applies_scaled_gradient() {
        let mut store = ParamStore::<f64>::new(0);
        store.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut grads = Gradients::new();
        grads.add("w", &[2], &[10.0, -10.0]);
        store.sgd_step(&grads, 0.1).unwrap();
        assert_eq!(store.get("w").unwrap().values(), &[0.0, 3.0]);
    }

    #[test]
    fn sgd_step_rejects_unknown_and_mismatched() {
        let mut store = ParamStore::<f64>::new(0);
        store.insert("w", Tensor::vector(vec![1.0, 2.0]));

        let mut grads = Gradients::new();
        grads.add("missing", &[2], &[1.0, 1.0]);
        assert!(matches!(store.sgd_step(&grads, 0.1), Err(Error::UnknownParam(_))));

        let mut grads = Gradients::new();
        grads.add("w", &[3], &[1.0, 1.0, 1.0]);
        assert!(matches!(store.sgd_step(&grads, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_accumulate_additively() {
        let mut grads = Gradients::new();
        grads.add("w", &[2], &[1.0, 2.0]);
        grads.add("w", &[2], &[0.5, -1.0]);
        assert_eq!(grads.get("w").unwrap().values(), &[1.5, 1.0]);
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut grads = Gradients::<f64>::new();
        grads.add("w", &[2], &[3.0, 4.0]);
        let before = grads.clip_global_norm(1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let after = grads.l2_norm();
        assert!((after - 1.0).abs() < 1e-12);

        let mut small = Gradients::<f64>::new();
        small.add("w", &[2], &[0.3, 0.4]);
        small.clip_global_norm(1.0);
        assert_eq!(small.get("w").unwrap().values(), &[0.3, 0.4]);
    }

    #[test]
    fn derive_seed_separates_indices() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }
}
