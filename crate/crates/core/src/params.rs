//! Named parameter storage and matching gradient buffers.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors. Insertion order is the
/// canonical order for checkpoints and optimizer state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name; names are fixed by the model layout.
    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of trainable scalars.
    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Replace a tensor's values, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Matrix) -> crate::Result<()> {
        let Some(id) = self.find(name) else {
            crate::error::bail!(Config, "unknown parameter {name}");
        };
        if self.values[id.0].shape() != value.shape() {
            crate::error::bail!(
                Config,
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                self.values[id.0].shape()
            );
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// One gradient matrix per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Matrix>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(store.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for m in &mut self.0 {
            m.scale(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.0.iter().map(Matrix::sum_squares).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}
