//! Uniform access to the learnable tensors of a parameter bundle.
//!
//! Every bundle (attention, cell, head, and the composed models) lists its
//! tensors in a fixed declared order. That order drives the optimizer, the
//! gradient checker, and the checkpoint layout, so gradients are stored in the
//! same bundle types as the parameters they mirror.

use rand::Rng;

use crate::numerics::Matrix;

/// Optimizer group. Fusion-layer tensors get their own learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Default,
    Fusion,
}

pub struct TensorRef<'a> {
    pub name: &'static str,
    pub group: Group,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: &'static str,
    pub group: Group,
    pub data: &'a mut [f64],
}

pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// A same-shaped bundle filled with zeros.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.fill(value);
        }
    }

    /// `self += other`, tensor by tensor in declared order.
    fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// All values concatenated in declared order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrites every value from a flat slice in declared order.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }

    fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        self.tensors()
            .iter()
            .find_map(|t| t.data.iter().position(|v| !v.is_finite()).map(|i| (t.name, i)))
    }
}

/// Glorot-uniform bound for a `rows × cols` weight.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn glorot_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let r = glorot_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite by construction")
}

/// Shorthand for implementing [`Parameters`] on a struct whose tensors are
/// `Matrix`, `Vec<f64>` or `f64` fields, and nested bundles.
macro_rules! tensor_ref {
    ($name:expr, $group:expr, matrix $v:expr) => {
        $crate::params::TensorRef { name: $name, group: $group, data: $v.data() }
    };
    ($name:expr, $group:expr, vector $v:expr) => {
        $crate::params::TensorRef { name: $name, group: $group, data: &$v[..] }
    };
    ($name:expr, $group:expr, scalar $v:expr) => {
        $crate::params::TensorRef { name: $name, group: $group, data: std::slice::from_ref(&$v) }
    };
}

macro_rules! tensor_mut {
    ($name:expr, $group:expr, matrix $v:expr) => {
        $crate::params::TensorMut { name: $name, group: $group, data: $v.data_mut() }
    };
    ($name:expr, $group:expr, vector $v:expr) => {
        $crate::params::TensorMut { name: $name, group: $group, data: &mut $v[..] }
    };
    ($name:expr, $group:expr, scalar $v:expr) => {
        $crate::params::TensorMut { name: $name, group: $group, data: std::slice::from_mut(&mut $v) }
    };
}

pub(crate) use tensor_mut;
pub(crate) use tensor_ref;
