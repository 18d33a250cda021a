//! Temporal attention module: a bidirectional ReLU RNN whose two hidden
//! streams are fused by a single sigmoid unit into one salience score per
//! timestep.

use rand::Rng;

use crate::error::{Result, TagmError};
use crate::numerics::{axpy, dot, relu_grad, relu_scalar, sigmoid, Matrix};
use crate::params::{glorot_matrix, tensor_mut, tensor_ref, Group, Parameters, TensorMut, TensorRef};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Forward-direction input weights, `H_a × D`.
    pub fwd_w: Matrix,
    /// Forward-direction recurrent weights, `H_a × H_a`.
    pub fwd_u: Matrix,
    pub fwd_b: Vec<f64>,
    pub bwd_w: Matrix,
    pub bwd_u: Matrix,
    pub bwd_b: Vec<f64>,
    /// Fusion weights over the concatenation `(fwd_h; bwd_h)`, length `2·H_a`.
    pub fusion_m: Vec<f64>,
    pub fusion_b: f64,
}

impl AttentionParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        AttentionParams {
            fwd_w: Matrix::zeros(hidden, input_dim),
            fwd_u: Matrix::zeros(hidden, hidden),
            fwd_b: vec![0.0; hidden],
            bwd_w: Matrix::zeros(hidden, input_dim),
            bwd_u: Matrix::zeros(hidden, hidden),
            bwd_b: vec![0.0; hidden],
            fusion_m: vec![0.0; 2 * hidden],
            fusion_b: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases, zero fusion bias.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd_w = glorot_matrix(hidden, input_dim, rng);
        let fwd_u = glorot_matrix(hidden, hidden, rng);
        let bwd_w = glorot_matrix(hidden, input_dim, rng);
        let bwd_u = glorot_matrix(hidden, hidden, rng);
        let fusion_m = glorot_matrix(1, 2 * hidden, rng).into_data();
        AttentionParams {
            fwd_w,
            fwd_u,
            fwd_b: vec![0.0; hidden],
            bwd_w,
            bwd_u,
            bwd_b: vec![0.0; hidden],
            fusion_m,
            fusion_b: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd_w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.fwd_b.len()
    }

    /// Swaps the two directions (including the fusion halves). Running the
    /// swapped module on a time-reversed sequence reverses the attention.
    pub fn swapped_directions(&self) -> Self {
        let h = self.hidden();
        let mut fusion_m = self.fusion_m[h..].to_vec();
        fusion_m.extend_from_slice(&self.fusion_m[..h]);
        AttentionParams {
            fwd_w: self.bwd_w.clone(),
            fwd_u: self.bwd_u.clone(),
            fwd_b: self.bwd_b.clone(),
            bwd_w: self.fwd_w.clone(),
            bwd_u: self.fwd_u.clone(),
            bwd_b: self.fwd_b.clone(),
            fusion_m,
            fusion_b: self.fusion_b,
        }
    }

    pub(crate) fn check_shapes(&self, input_dim: usize) -> Result<()> {
        let h = self.hidden();
        let ok = self.fwd_w.rows() == h
            && self.fwd_w.cols() == input_dim
            && self.bwd_w.rows() == h
            && self.bwd_w.cols() == input_dim
            && self.fwd_u.rows() == h
            && self.fwd_u.cols() == h
            && self.bwd_u.rows() == h
            && self.bwd_u.cols() == h
            && self.bwd_b.len() == h
            && self.fusion_m.len() == 2 * h;
        if ok {
            Ok(())
        } else {
            Err(TagmError::shape(
                "attention parameters",
                format!("consistent shapes for D={input_dim}, H_a={h}"),
                format!(
                    "fwd_w {}, fwd_u {}, bwd_w {}, bwd_u {}, bwd_b {}, fusion_m {}",
                    self.fwd_w.shape_string(),
                    self.fwd_u.shape_string(),
                    self.bwd_w.shape_string(),
                    self.bwd_u.shape_string(),
                    self.bwd_b.len(),
                    self.fusion_m.len()
                ),
            ))
        }
    }
}

impl Parameters for AttentionParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tensor_ref!("attention.fwd_w", Group::Default, matrix self.fwd_w),
            tensor_ref!("attention.fwd_u", Group::Default, matrix self.fwd_u),
            tensor_ref!("attention.fwd_b", Group::Default, vector self.fwd_b),
            tensor_ref!("attention.bwd_w", Group::Default, matrix self.bwd_w),
            tensor_ref!("attention.bwd_u", Group::Default, matrix self.bwd_u),
            tensor_ref!("attention.bwd_b", Group::Default, vector self.bwd_b),
            tensor_ref!("attention.fusion_m", Group::Fusion, vector self.fusion_m),
            tensor_ref!("attention.fusion_b", Group::Fusion, scalar self.fusion_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            tensor_mut!("attention.fwd_w", Group::Default, matrix self.fwd_w),
            tensor_mut!("attention.fwd_u", Group::Default, matrix self.fwd_u),
            tensor_mut!("attention.fwd_b", Group::Default, vector self.fwd_b),
            tensor_mut!("attention.bwd_w", Group::Default, matrix self.bwd_w),
            tensor_mut!("attention.bwd_u", Group::Default, matrix self.bwd_u),
            tensor_mut!("attention.bwd_b", Group::Default, vector self.bwd_b),
            tensor_mut!("attention.fusion_m", Group::Fusion, vector self.fusion_m),
            tensor_mut!("attention.fusion_b", Group::Fusion, scalar self.fusion_b),
        ]
    }
}

/// Everything the backward pass needs from one attention forward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// Salience score per timestep, each in `[0, 1]`.
    pub a: Vec<f64>,
    /// Fused pre-sigmoid logits.
    pub logits: Vec<f64>,
    pub fwd_pre: Matrix,
    pub fwd_h: Matrix,
    pub bwd_pre: Matrix,
    pub bwd_h: Matrix,
}

impl AttentionTrace {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub(crate) fn min_abs_preactivation(&self) -> f64 {
        self.fwd_pre
            .data()
            .iter()
            .chain(self.bwd_pre.data())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn check_sequence(x: &Matrix, input_dim: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(TagmError::EmptySequence);
    }
    if x.cols() != input_dim {
        return Err(TagmError::shape("sequence observation dimension", input_dim, x.cols()));
    }
    Ok(())
}

/// Runs the bidirectional RNN over `x` (`T × D`) and fuses both directions
/// into per-timestep attention scores.
pub fn attention_forward(x: &Matrix, p: &AttentionParams) -> Result<AttentionTrace> {
    check_sequence(x, p.input_dim())?;
    p.check_shapes(x.cols())?;
    let t_len = x.rows();
    let h = p.hidden();

    let mut fwd_pre = Matrix::zeros(t_len, h);
    let mut fwd_h = Matrix::zeros(t_len, h);
    let zero = vec![0.0; h];
    for t in 0..t_len {
        let prev = if t == 0 { zero.clone() } else { fwd_h.row(t - 1).to_vec() };
        let pre = fwd_pre.row_mut(t);
        p.fwd_w.matvec_acc(x.row(t), pre);
        p.fwd_u.matvec_acc(&prev, pre);
        for (z, b) in pre.iter_mut().zip(&p.fwd_b) {
            *z += b;
        }
        let act: Vec<f64> = pre.iter().copied().map(relu_scalar).collect();
        fwd_h.row_mut(t).copy_from_slice(&act);
    }

    let mut bwd_pre = Matrix::zeros(t_len, h);
    let mut bwd_h = Matrix::zeros(t_len, h);
    for t in (0..t_len).rev() {
        let next = if t + 1 == t_len { zero.clone() } else { bwd_h.row(t + 1).to_vec() };
        let pre = bwd_pre.row_mut(t);
        p.bwd_w.matvec_acc(x.row(t), pre);
        p.bwd_u.matvec_acc(&next, pre);
        for (z, b) in pre.iter_mut().zip(&p.bwd_b) {
            *z += b;
        }
        let act: Vec<f64> = pre.iter().copied().map(relu_scalar).collect();
        bwd_h.row_mut(t).copy_from_slice(&act);
    }

    let (m_fwd, m_bwd) = p.fusion_m.split_at(h);
    let logits: Vec<f64> = (0..t_len)
        .map(|t| dot(m_fwd, fwd_h.row(t)) + dot(m_bwd, bwd_h.row(t)) + p.fusion_b)
        .collect();
    let a = logits.iter().copied().map(sigmoid).collect();

    Ok(AttentionTrace {
        a,
        logits,
        fwd_pre,
        fwd_h,
        bwd_pre,
        bwd_h,
    })
}

/// Backpropagates `Σ_t grad_a[t]·a_t` through the module.
///
/// Returns parameter gradients (in an [`AttentionParams`] bundle) and the
/// gradient with respect to the input sequence.
pub fn attention_backward(
    x: &Matrix,
    p: &AttentionParams,
    trace: &AttentionTrace,
    grad_a: &[f64],
) -> Result<(AttentionParams, Matrix)> {
    check_sequence(x, p.input_dim())?;
    let t_len = x.rows();
    if grad_a.len() != t_len {
        return Err(TagmError::shape("attention_backward grad_a length", t_len, grad_a.len()));
    }
    if trace.len() != t_len {
        return Err(TagmError::shape("attention_backward trace length", t_len, trace.len()));
    }
    let h = p.hidden();
    let d = x.cols();
    let mut g = AttentionParams::zeros(d, h);
    let mut gx = Matrix::zeros(t_len, d);

    // Fusion layer: ds_t = grad_a[t] · σ'(s_t).
    let ds: Vec<f64> = trace
        .a
        .iter()
        .zip(grad_a)
        .map(|(&a, &ga)| ga * a * (1.0 - a))
        .collect();
    let (m_fwd, m_bwd) = p.fusion_m.split_at(h);
    for t in 0..t_len {
        let (gm_fwd, gm_bwd) = g.fusion_m.split_at_mut(h);
        axpy(ds[t], trace.fwd_h.row(t), gm_fwd);
        axpy(ds[t], trace.bwd_h.row(t), gm_bwd);
        g.fusion_b += ds[t];
    }

    // Forward direction: h_t feeds h_{t+1}, so walk right to left.
    let mut carry = vec![0.0; h];
    let mut dpre = vec![0.0; h];
    for t in (0..t_len).rev() {
        for i in 0..h {
            let dh = ds[t] * m_fwd[i] + carry[i];
            dpre[i] = dh * relu_grad(trace.fwd_pre.get(t, i));
        }
        g.fwd_w.add_outer(&dpre, x.row(t));
        if t > 0 {
            g.fwd_u.add_outer(&dpre, trace.fwd_h.row(t - 1));
        }
        axpy(1.0, &dpre, &mut g.fwd_b);
        p.fwd_w.matvec_t_acc(&dpre, gx.row_mut(t));
        carry.fill(0.0);
        p.fwd_u.matvec_t_acc(&dpre, &mut carry);
    }

    // Backward direction: h_t feeds h_{t-1}, so walk left to right.
    carry.fill(0.0);
    for t in 0..t_len {
        for i in 0..h {
            let dh = ds[t] * m_bwd[i] + carry[i];
            dpre[i] = dh * relu_grad(trace.bwd_pre.get(t, i));
        }
        g.bwd_w.add_outer(&dpre, x.row(t));
        if t + 1 < t_len {
            g.bwd_u.add_outer(&dpre, trace.bwd_h.row(t + 1));
        }
        axpy(1.0, &dpre, &mut g.bwd_b);
        p.bwd_w.matvec_t_acc(&dpre, gx.row_mut(t));
        carry.fill(0.0);
        p.bwd_u.matvec_t_acc(&dpre, &mut carry);
    }

    Ok((g, gx))
}
