//! Recurrent attention-gated units.
//!
//! The hidden state is a convex blend of the previous state and a ReLU
//! candidate, weighted by the scalar attention score of the timestep:
//!
//! ```text
//! h'_t = relu(W·h_{t-1} + U·x_t + b)
//! h_t  = (1 - a_t)·h_{t-1} + a_t·h'_t
//! ```

use rand::Rng;

use crate::error::{Result, TagmError};
use crate::numerics::{axpy, dot, relu_grad, relu_scalar, Matrix};
use crate::params::{glorot_matrix, tensor_mut, tensor_ref, Group, Parameters, TensorMut, TensorRef};

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// Recurrent weights, `H_c × H_c`.
    pub w: Matrix,
    /// Input weights, `H_c × D`.
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl CellParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        CellParams {
            w: Matrix::zeros(hidden, hidden),
            u: Matrix::zeros(hidden, input_dim),
            b: vec![0.0; hidden],
        }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        CellParams {
            w: glorot_matrix(hidden, hidden, rng),
            u: glorot_matrix(hidden, input_dim, rng),
            b: vec![0.0; hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden();
        if self.w.rows() != h || self.w.cols() != h || self.u.rows() != h {
            return Err(TagmError::shape(
                "cell parameters",
                format!("W {h}x{h}, U {h}x{}", self.input_dim()),
                format!("W {}, U {}", self.w.shape_string(), self.u.shape_string()),
            ));
        }
        Ok(())
    }
}

impl Parameters for CellParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tensor_ref!("cell.w", Group::Default, matrix self.w),
            tensor_ref!("cell.u", Group::Default, matrix self.u),
            tensor_ref!("cell.b", Group::Default, vector self.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            tensor_mut!("cell.w", Group::Default, matrix self.w),
            tensor_mut!("cell.u", Group::Default, matrix self.u),
            tensor_mut!("cell.b", Group::Default, vector self.b),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CellTrace {
    /// Candidate pre-activations, `T × H_c`.
    pub pre: Matrix,
    /// Candidates `h'_t`, `T × H_c`.
    pub candidates: Matrix,
    /// Hidden states `h_0..h_T`, `(T+1) × H_c`; row 0 is the zero initial state.
    pub states: Matrix,
}

impl CellTrace {
    pub fn len(&self) -> usize {
        self.pre.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.pre.rows() == 0
    }

    /// `h_t` for `t` in `0..=T`.
    pub fn state(&self, t: usize) -> &[f64] {
        self.states.row(t)
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.row(self.states.rows() - 1)
    }

    pub(crate) fn min_abs_preactivation(&self) -> f64 {
        self.pre.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

pub struct CellGradients {
    pub params: CellParams,
    pub grad_a: Vec<f64>,
    pub grad_x: Matrix,
}

fn check_inputs(x: &Matrix, a: &[f64], p: &CellParams) -> Result<()> {
    p.check_shapes()?;
    if x.rows() == 0 {
        return Err(TagmError::EmptySequence);
    }
    if x.cols() != p.input_dim() {
        return Err(TagmError::shape("cell input dimension", p.input_dim(), x.cols()));
    }
    if a.len() != x.rows() {
        return Err(TagmError::shape("attention length vs sequence length", x.rows(), a.len()));
    }
    Ok(())
}

/// `(1 - a)·prev + a·cand`, kept inside `[min, max]` of the two endpoints so
/// rounding never pushes the result outside the segment.
#[inline]
pub(crate) fn convex_blend(prev: f64, cand: f64, a: f64) -> f64 {
    let v = (1.0 - a) * prev + a * cand;
    v.max(prev.min(cand)).min(prev.max(cand))
}

/// Runs the gated recurrence. The attention scores are used as given and must
/// already lie in `[0, 1]`.
pub fn cell_forward(x: &Matrix, a: &[f64], p: &CellParams) -> Result<CellTrace> {
    check_inputs(x, a, p)?;
    if let Some((t, v)) = a.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(TagmError::InvalidArgument(format!(
            "attention score a[{t}] = {v} is outside [0, 1]"
        )));
    }
    let t_len = x.rows();
    let h = p.hidden();
    let mut pre = Matrix::zeros(t_len, h);
    let mut candidates = Matrix::zeros(t_len, h);
    let mut states = Matrix::zeros(t_len + 1, h);

    for t in 0..t_len {
        let at = a[t];
        for i in 0..h {
            let z = dot(p.u.row(i), x.row(t)) + dot(p.w.row(i), states.row(t)) + p.b[i];
            let cand = relu_scalar(z);
            let prev = states.get(t, i);
            pre.set(t, i, z);
            candidates.set(t, i, cand);
            states.set(t + 1, i, convex_blend(prev, cand, at));
        }
    }
    Ok(CellTrace {
        pre,
        candidates,
        states,
    })
}

/// Backpropagates `grad_hT · h_T` to the cell parameters, the attention
/// scores, and the inputs.
pub fn cell_backward(
    x: &Matrix,
    a: &[f64],
    p: &CellParams,
    trace: &CellTrace,
    grad_ht: &[f64],
) -> Result<CellGradients> {
    check_inputs(x, a, p)?;
    let t_len = x.rows();
    let h = p.hidden();
    if trace.len() != t_len {
        return Err(TagmError::shape("cell_backward trace length", t_len, trace.len()));
    }
    if grad_ht.len() != h {
        return Err(TagmError::shape("cell_backward grad_hT length", h, grad_ht.len()));
    }

    let mut g = CellParams::zeros(x.cols(), h);
    let mut grad_a = vec![0.0; t_len];
    let mut grad_x = Matrix::zeros(t_len, x.cols());
    let mut delta = grad_ht.to_vec();
    let mut dz = vec![0.0; h];

    for t in (0..t_len).rev() {
        let at = a[t];
        let prev = trace.state(t);
        let cand = trace.candidates.row(t);
        grad_a[t] = delta
            .iter()
            .zip(cand.iter().zip(prev))
            .map(|(d, (c, hp))| d * (c - hp))
            .sum();
        for i in 0..h {
            dz[i] = at * delta[i] * relu_grad(trace.pre.get(t, i));
        }
        g.w.add_outer(&dz, prev);
        g.u.add_outer(&dz, x.row(t));
        axpy(1.0, &dz, &mut g.b);
        p.u.matvec_t_acc(&dz, grad_x.row_mut(t));

        let mut next = vec![0.0; h];
        for (n, d) in next.iter_mut().zip(&delta) {
            *n = (1.0 - at) * d;
        }
        p.w.matvec_t_acc(&dz, &mut next);
        delta = next;
    }

    Ok(CellGradients {
        params: g,
        grad_a,
        grad_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::affine;
    use crate::testutil::{central_difference, max_rel_error, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(d: usize, h: usize, rng: &mut ChaCha8Rng) -> CellParams {
        let mut p = CellParams::zeros(d, h);
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        p
    }

    fn random_gates(t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..t).map(|_| rng.random_range(0.05..0.95)).collect()
    }

    #[test]
    fn closed_gate_keeps_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(3, 4, &mut rng);
        let x = random_matrix(6, 3, &mut rng);
        let tr = cell_forward(&x, &[0.0; 6], &p).unwrap();
        assert!(tr.final_state().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn open_gate_without_recurrence_is_feed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_params(3, 4, &mut rng);
        p.w = Matrix::zeros(4, 4);
        let x = random_matrix(5, 3, &mut rng);
        let tr = cell_forward(&x, &[1.0; 5], &p).unwrap();
        for t in 0..5 {
            let expected = crate::numerics::relu(&affine(&p.u, x.row(t), &p.b).unwrap());
            assert_eq!(tr.state(t + 1), &expected[..]);
        }
    }

    #[test]
    fn hand_unrolled_two_steps() {
        let p = CellParams {
            w: Matrix::from_rows(&[vec![1.0]]).unwrap(),
            u: Matrix::from_rows(&[vec![1.0]]).unwrap(),
            b: vec![0.0],
        };
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let tr = cell_forward(&x, &[0.5, 0.5], &p).unwrap();
        assert_eq!(tr.candidates.data(), &[1.0, 2.5]);
        assert_eq!(tr.states.data(), &[0.0, 0.5, 1.5]);
    }

    #[test]
    fn rejects_out_of_range_gate_and_shapes() {
        let p = CellParams::zeros(2, 3);
        let x = Matrix::zeros(2, 2);
        assert!(cell_forward(&x, &[0.5, 1.5], &p).is_err());
        assert!(cell_forward(&x, &[0.5], &p).is_err());
        assert!(cell_forward(&Matrix::zeros(2, 3), &[0.5, 0.5], &p).is_err());
        let tr = cell_forward(&x, &[0.5, 0.5], &p).unwrap();
        assert!(cell_backward(&x, &[0.5, 0.5], &p, &tr, &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(3, 4, &mut rng);
        let x = random_matrix(6, 3, &mut rng);
        let a = random_gates(6, &mut rng);
        let tr = cell_forward(&x, &a, &p).unwrap();
        let g = cell_backward(&x, &a, &p, &tr, &[0.0; 4]).unwrap();
        assert_eq!(g.params.max_abs(), 0.0);
        assert!(g.grad_a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_gate_blocks_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(3, 4, &mut rng);
        let x = random_matrix(6, 3, &mut rng);
        let a = vec![0.0; 6];
        let tr = cell_forward(&x, &a, &p).unwrap();
        let g = cell_backward(&x, &a, &p, &tr, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(g.params.max_abs(), 0.0);
        // the gate itself still receives gradient: h_T moves if any a_t opens
        assert!(g.grad_a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (d, h, t_len) = (3, 4, 6);
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 20 {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(d, h, &mut rng);
            let x = random_matrix(t_len, d, &mut rng);
            let a = random_gates(t_len, &mut rng);
            let up: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tr = cell_forward(&x, &a, &p).unwrap();
            if tr.min_abs_preactivation() < 1e-4 {
                continue;
            }
            checked += 1;
            let g = cell_backward(&x, &a, &p, &tr, &up).unwrap();
            let objective = |x: &Matrix, a: &[f64], p: &CellParams| {
                dot(cell_forward(x, a, p).unwrap().final_state(), &up)
            };

            let num_p = central_difference(&p.flatten(), 1e-5, |theta| {
                let mut q = p.clone();
                q.assign_flat(theta);
                objective(&x, &a, &q)
            });
            let err = max_rel_error(&g.params.flatten(), &num_p);
            assert!(err < 1e-4, "seed {seed}: params rel error {err}");

            let num_a = central_difference(&a, 1e-5, |aa| objective(&x, aa, &p));
            let err = max_rel_error(&g.grad_a, &num_a);
            assert!(err < 1e-4, "seed {seed}: grad_a rel error {err}");

            let num_x = central_difference(x.data(), 1e-5, |xs| {
                objective(&Matrix::from_vec(t_len, d, xs.to_vec()).unwrap(), &a, &p)
            });
            let err = max_rel_error(g.grad_x.data(), &num_x);
            assert!(err < 1e-4, "seed {seed}: grad_x rel error {err}");
        }
    }
}
