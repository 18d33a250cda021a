//! Dense row-major linear algebra and the elementwise functions the models use.
//!
//! Everything is `f64`. Vectors are plain `Vec<f64>` / `&[f64]`; matrices are
//! [`Matrix`]. The hot-path helpers (`matvec_acc`, `add_outer`, ...) only
//! `debug_assert!` their shapes; the public checked entry points return
//! [`TagmError::Shape`].

use crate::error::{Result, TagmError};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TagmError::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TagmError::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TagmError::shape("Matrix::from_rows", cols, bad.len()));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics; a zero-column matrix still has `rows` empty rows
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    /// Returns a copy with the row order reversed.
    pub fn reversed_rows(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.data.len());
        for i in (0..self.rows).rev() {
            out.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: out,
        }
    }

    /// `out += self · x`, accumulating row dot products left to right.
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · y`.
    #[inline]
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * yi;
            }
        }
    }

    /// `self += u ⊗ v` (rank-one update).
    #[inline]
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            for (w, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *w += ui * vj;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `W·x + b` with shape checking.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(TagmError::shape("affine (W.cols vs x.len)", w.cols(), x.len()));
    }
    if w.rows() != b.len() {
        return Err(TagmError::shape("affine (W.rows vs b.len)", w.rows(), b.len()));
    }
    Ok(w.row_iter().zip(b).map(|(row, bi)| dot(row, x) + bi).collect())
}

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Derivative of ReLU; the value at exactly 0 is taken to be 0.
#[inline]
pub fn relu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().copied().map(relu_scalar).collect()
}

/// Logistic function; only ever exponentiates a non-positive argument.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax. Panics on an empty input.
pub fn softmax_stable(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "softmax of an empty vector");
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn clip_in_place(g: &mut [f64], lo: f64, hi: f64) -> Result<()> {
    if !(lo <= hi) {
        return Err(TagmError::InvalidArgument(format!(
            "clip range is empty: lo = {lo} > hi = {hi}"
        )));
    }
    for v in g.iter_mut() {
        *v = v.max(lo).min(hi);
    }
    Ok(())
}

pub fn clip_elementwise(g: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, lo, hi)?;
    Ok(out)
}

pub fn clip_matrix(g: &Matrix, lo: f64, hi: f64) -> Result<Matrix> {
    let mut out = g.clone();
    clip_in_place(out.data_mut(), lo, hi)?;
    Ok(out)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        assert_eq!(affine(&Matrix::identity(2), &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(affine(&Matrix::zeros(2, 2), &[3.0, 4.0], &[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(affine(&w, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn affine_rejects_mismatch() {
        let w = Matrix::zeros(2, 3);
        let err = affine(&w, &[1.0, 2.0], &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("expected 3, got 2"), "{err}");
        assert!(affine(&w, &[1.0, 2.0, 3.0], &[0.0]).is_err());
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(relu(&[5.5, -3.2]), vec![5.5, 0.0]);
        assert_eq!(relu_grad(0.0), 0.0);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid(-100.0);
        assert!(s < 1e-40 && s >= 0.0);
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_stable(&[0.0, 0.0]), vec![0.5, 0.5]);
        for p in softmax_stable(&[1000.0, 1000.0, 1000.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (p, e) in softmax_stable(&[1.0, 2.0, 3.0]).iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_elementwise(&[-7.0, 0.0, 7.0], -5.0, 5.0).unwrap(), vec![-5.0, 0.0, 5.0]);
        assert_eq!(clip_elementwise(&[1.0, 2.0], -5.0, 5.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(clip_elementwise(&[-5.0001], -5.0, 5.0).unwrap(), vec![-5.0]);
        assert!(clip_elementwise(&[1.0], 1.0, -1.0).is_err());
        let m = Matrix::from_rows(&[vec![9.0, -9.0]]).unwrap();
        assert_eq!(clip_matrix(&m, -5.0, 5.0).unwrap().data(), &[5.0, -5.0]);
    }

    #[test]
    fn transpose_and_outer() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 2];
        w.matvec_t_acc(&[1.0, 0.0, 1.0], &mut out);
        assert_eq!(out, vec![6.0, 8.0]);
        let mut m = Matrix::zeros(2, 2);
        m.add_outer(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(m.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, len)
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(z in prop::collection::vec(-500.0f64..500.0, 1..12), shift in -1e3f64..1e3) {
            let p = softmax_stable(&z);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            for (a, b) in p.iter().zip(softmax_stable(&shifted)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let mut rev = z.clone();
            rev.reverse();
            let mut prev = softmax_stable(&rev);
            prev.reverse();
            for (a, b) in p.iter().zip(prev) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn sigmoid_symmetry(x in -50.0f64..50.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn relu_idempotent(x in finite_vec(8)) {
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }

        #[test]
        fn affine_linearity(w in finite_vec(12), x in finite_vec(4), y in finite_vec(4), a in -3.0f64..3.0, c in -3.0f64..3.0) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let zero = [0.0; 3];
            let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + c * yi).collect();
            let lhs = affine(&w, &combo, &zero).unwrap();
            let fx = affine(&w, &x, &zero).unwrap();
            let fy = affine(&w, &y, &zero).unwrap();
            let scale: f64 = w.data().iter().map(|v| v.abs()).sum::<f64>()
                * (x.iter().chain(&y).map(|v| v.abs()).fold(0.0, f64::max)) * 6.0 + 1.0;
            for i in 0..3 {
                let rhs = a * fx[i] + c * fy[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * scale);
            }
        }
    }
}
