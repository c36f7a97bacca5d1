//! Named parameter storage shared by all networks.
//!
//! Layers hold [`ParamId`] handles into a [`ParamStore`]; the store owns the
//! arrays. Shapes are fixed at registration and never change afterwards,
//! which keeps checkpoints, optimizer state and gradient buffers aligned by
//! construction.

use std::collections::HashMap;

use indexmap::IndexMap;
use ndarray::{Array1, Array4, ArrayD, ArrayViewD, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Handle to one parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of parameter arrays.
#[derive(Debug, Clone)]
pub struct ParamStore<F = f32> {
    names: Vec<String>,
    arrays: Vec<ArrayD<F>>,
    index: HashMap<String, usize>,
}

impl<F: NdFloat> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            arrays: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, array: ArrayD<F>) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.arrays.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.arrays.push(array);
        id
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.arrays[id.0]
    }

    /// Typed view of a rank-4 parameter (conv weights).
    pub fn get4(&self, id: ParamId) -> ndarray::ArrayView4<'_, F> {
        self.arrays[id.0]
            .view()
            .into_dimensionality()
            .expect("parameter registered as rank 4")
    }

    /// Typed view of a rank-1 parameter (biases, norm scales).
    pub fn get1(&self, id: ParamId) -> ndarray::ArrayView1<'_, F> {
        self.arrays[id.0]
            .view()
            .into_dimensionality()
            .expect("parameter registered as rank 1")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.arrays.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<F>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.arrays.iter_mut())
    }

    /// Total number of scalar parameters across all arrays.
    pub fn total_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }
}

impl ParamStore<f32> {
    /// Widened copy for reference computations (finite differences).
    pub fn to_f64(&self) -> ParamStore<f64> {
        ParamStore {
            names: self.names.clone(),
            arrays: self.arrays.iter().map(|a| a.mapv(|v| v as f64)).collect(),
            index: self.index.clone(),
        }
    }

    /// Named snapshot of every array.
    pub fn snapshot(&self) -> Parameters {
        Parameters(
            self.names
                .iter()
                .cloned()
                .zip(self.arrays.iter().cloned())
                .collect(),
        )
    }

    /// Loads a snapshot back, requiring an exact name and shape match.
    pub fn load_snapshot(&mut self, params: &Parameters) -> Result<()> {
        if params.0.len() != self.arrays.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: stored {}, expected {}",
                params.0.len(),
                self.arrays.len()
            )));
        }
        for (name, array) in params.0.iter() {
            let idx = *self.index.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("unknown parameter name {name}"))
            })?;
            if self.arrays[idx].shape() != array.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: stored {:?}, expected {:?}",
                    array.shape(),
                    self.arrays[idx].shape()
                )));
            }
            self.arrays[idx].assign(array);
        }
        Ok(())
    }
}

/// Named map from layer identifier to parameter array.
///
/// This is the exported, self-describing form of a network's state; the
/// in-memory training path goes through [`ParamStore`] instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters(pub IndexMap<String, ArrayD<f32>>);

impl Parameters {
    pub fn total_scalars(&self) -> usize {
        self.0.values().map(|a| a.len()).sum()
    }
}

/// Gradient buffers aligned index-for-index with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    arrays: Vec<ArrayD<f32>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore<f32>) -> Self {
        Grads {
            arrays: store.arrays.iter().map(|a| ArrayD::zeros(a.raw_dim())).collect(),
        }
    }

    pub fn reset(&mut self) {
        for a in &mut self.arrays {
            a.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f32> {
        &self.arrays[id.0]
    }

    /// Adds `delta` into the gradient slot for `id`.
    pub fn accumulate(&mut self, id: ParamId, delta: &ArrayViewD<'_, f32>) {
        let slot = &mut self.arrays[id.0];
        debug_assert_eq!(slot.shape(), delta.shape());
        *slot += delta;
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<f32>> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<f32>> {
        self.arrays.iter_mut()
    }
}

/// Draws a conv weight tensor from a seeded Gaussian (mean 0, std 0.02),
/// filling elements in row-major order.
pub(crate) fn init_conv_weight<R: Rng>(
    rng: &mut R,
    shape: (usize, usize, usize, usize),
) -> Array4<f32> {
    let normal = Normal::new(0.0f64, 0.02).expect("valid std");
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let data: Vec<f32> = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Array4::from_shape_vec(shape, data).expect("shape matches length")
}

pub(crate) fn init_zeros(n: usize) -> Array1<f32> {
    Array1::zeros(n)
}

pub(crate) fn init_ones(n: usize) -> Array1<f32> {
    Array1::ones(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registration_fixes_shapes_and_names() {
        let mut ps: ParamStore<f32> = ParamStore::new();
        let id = ps.register("a.weight", ArrayD::zeros(ndarray::IxDyn(&[2, 3])));
        assert_eq!(ps.name(id), "a.weight");
        assert_eq!(ps.get(id).shape(), &[2, 3]);
        assert_eq!(ps.total_scalars(), 6);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let w1 = init_conv_weight(&mut r1, (4, 3, 3, 3));
        let w2 = init_conv_weight(&mut r2, (4, 3, 3, 3));
        assert_eq!(w1, w2);
        let mut r3 = ChaCha8Rng::seed_from_u64(8);
        assert_ne!(w1, init_conv_weight(&mut r3, (4, 3, 3, 3)));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps: ParamStore<f32> = ParamStore::new();
        ps.register("w", init_conv_weight(&mut rng, (2, 2, 3, 3)).into_dyn());
        let snap = ps.snapshot();
        let mut ps2 = ps.clone();
        ps2.get_mut(ParamId(0)).fill(0.0);
        assert_ne!(ps2.snapshot(), snap);
        ps2.load_snapshot(&snap).unwrap();
        assert_eq!(ps2.snapshot(), snap);
    }
}
