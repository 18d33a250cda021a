//! Comparison models: a plain ReLU RNN, and the attention module followed by
//! a feed-forward layer over the attention-weighted input sum (AM-NN).

use rand::Rng;

use crate::attention::{attention_backward, attention_forward, AttentionParams, AttentionTrace};
use crate::error::{Result, TagmError};
use crate::heads::HeadParams;
use crate::numerics::{axpy, dot, relu_grad, relu_scalar, Matrix};
use crate::params::{glorot_matrix, tensor_mut, tensor_ref, Group, Parameters, TensorMut, TensorRef};

#[derive(Debug, Clone, PartialEq)]
pub struct PlainRnnParams {
    /// Input weights, `H × D`.
    pub w: Matrix,
    /// Recurrent weights, `H × H`.
    pub u: Matrix,
    pub b: Vec<f64>,
    pub head: HeadParams,
}

impl PlainRnnParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        PlainRnnParams {
            w: Matrix::zeros(hidden, input_dim),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
            head: HeadParams::zeros(hidden, classes),
        }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        PlainRnnParams {
            w: glorot_matrix(hidden, input_dim, rng),
            u: glorot_matrix(hidden, hidden, rng),
            b: vec![0.0; hidden],
            head: HeadParams::init(hidden, classes, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }
}

impl Parameters for PlainRnnParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = vec![
            tensor_ref!("rnn.w", Group::Default, matrix self.w),
            tensor_ref!("rnn.u", Group::Default, matrix self.u),
            tensor_ref!("rnn.b", Group::Default, vector self.b),
        ];
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = vec![
            tensor_mut!("rnn.w", Group::Default, matrix self.w),
            tensor_mut!("rnn.u", Group::Default, matrix self.u),
            tensor_mut!("rnn.b", Group::Default, vector self.b),
        ];
        v.extend(self.head.tensors_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct RnnTrace {
    pub pre: Matrix,
    /// `h_0..h_T`; row 0 is zero.
    pub states: Matrix,
}

impl RnnTrace {
    pub fn final_state(&self) -> &[f64] {
        self.states.row(self.states.rows() - 1)
    }

    pub(crate) fn min_abs_preactivation(&self) -> f64 {
        self.pre.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
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

/// `h_t = relu(W·x_t + U·h_{t-1} + b)` with `h_0 = 0`.
pub fn plain_rnn_forward(x: &Matrix, p: &PlainRnnParams) -> Result<RnnTrace> {
    check_sequence(x, p.w.cols())?;
    let h = p.hidden();
    if p.u.rows() != h || p.u.cols() != h || p.w.rows() != h {
        return Err(TagmError::shape(
            "plain RNN parameters",
            format!("W {h}x{}, U {h}x{h}", p.w.cols()),
            format!("W {}, U {}", p.w.shape_string(), p.u.shape_string()),
        ));
    }
    let t_len = x.rows();
    let mut pre = Matrix::zeros(t_len, h);
    let mut states = Matrix::zeros(t_len + 1, h);
    for t in 0..t_len {
        for i in 0..h {
            let z = dot(p.w.row(i), x.row(t)) + dot(p.u.row(i), states.row(t)) + p.b[i];
            pre.set(t, i, z);
            states.set(t + 1, i, relu_scalar(z));
        }
    }
    Ok(RnnTrace { pre, states })
}

/// Gradients of `grad_ht · h_T` for the recurrent part; the `head` field of
/// the returned bundle is left at zero.
pub fn plain_rnn_backward(
    x: &Matrix,
    p: &PlainRnnParams,
    trace: &RnnTrace,
    grad_ht: &[f64],
) -> Result<(PlainRnnParams, Matrix)> {
    check_sequence(x, p.w.cols())?;
    let h = p.hidden();
    if grad_ht.len() != h {
        return Err(TagmError::shape("plain RNN grad_hT length", h, grad_ht.len()));
    }
    if trace.pre.rows() != x.rows() {
        return Err(TagmError::shape("plain RNN trace length", x.rows(), trace.pre.rows()));
    }
    let mut g = PlainRnnParams::zeros(x.cols(), h, p.head.classes());
    let mut gx = Matrix::zeros(x.rows(), x.cols());
    let mut delta = grad_ht.to_vec();
    let mut dz = vec![0.0; h];
    for t in (0..x.rows()).rev() {
        for i in 0..h {
            dz[i] = delta[i] * relu_grad(trace.pre.get(t, i));
        }
        g.w.add_outer(&dz, x.row(t));
        g.u.add_outer(&dz, trace.states.row(t));
        axpy(1.0, &dz, &mut g.b);
        p.w.matvec_t_acc(&dz, gx.row_mut(t));
        delta.fill(0.0);
        p.u.matvec_t_acc(&dz, &mut delta);
    }
    Ok((g, gx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmnnParams {
    pub attention: AttentionParams,
    /// Feed-forward weights, `H × D`.
    pub ff_w: Matrix,
    pub ff_b: Vec<f64>,
    pub head: HeadParams,
}

impl AmnnParams {
    pub fn zeros(input_dim: usize, attn_hidden: usize, hidden: usize, classes: usize) -> Self {
        AmnnParams {
            attention: AttentionParams::zeros(input_dim, attn_hidden),
            ff_w: Matrix::zeros(hidden, input_dim),
            ff_b: vec![0.0; hidden],
            head: HeadParams::zeros(hidden, classes),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        attn_hidden: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        AmnnParams {
            attention: AttentionParams::init(input_dim, attn_hidden, rng),
            ff_w: glorot_matrix(hidden, input_dim, rng),
            ff_b: vec![0.0; hidden],
            head: HeadParams::init(hidden, classes, rng),
        }
    }
}

impl Parameters for AmnnParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.attention.tensors();
        v.push(tensor_ref!("ff.w", Group::Default, matrix self.ff_w));
        v.push(tensor_ref!("ff.b", Group::Default, vector self.ff_b));
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.attention.tensors_mut();
        v.push(tensor_mut!("ff.w", Group::Default, matrix self.ff_w));
        v.push(tensor_mut!("ff.b", Group::Default, vector self.ff_b));
        v.extend(self.head.tensors_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct AmnnTrace {
    pub attention: AttentionTrace,
    /// Attention-weighted input sum `v = Σ_t a_t·x_t`.
    pub pooled: Vec<f64>,
    pub pre: Vec<f64>,
    pub h: Vec<f64>,
}

impl AmnnTrace {
    pub(crate) fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .fold(self.attention.min_abs_preactivation(), |m, v| m.min(v.abs()))
    }
}

/// Pools the inputs by their attention scores, then `h = relu(W·v + b)`.
pub fn amnn_forward(x: &Matrix, p: &AmnnParams) -> Result<AmnnTrace> {
    let attention = attention_forward(x, &p.attention)?;
    pooled_forward(x, attention, p)
}

pub(crate) fn pooled_forward(x: &Matrix, attention: AttentionTrace, p: &AmnnParams) -> Result<AmnnTrace> {
    if p.ff_w.cols() != x.cols() || p.ff_w.rows() != p.ff_b.len() {
        return Err(TagmError::shape(
            "AM-NN feed-forward weights",
            format!("{}x{}", p.ff_b.len(), x.cols()),
            p.ff_w.shape_string(),
        ));
    }
    let mut pooled = vec![0.0; x.cols()];
    for (t, &a) in attention.a.iter().enumerate() {
        axpy(a, x.row(t), &mut pooled);
    }
    let pre = crate::numerics::affine(&p.ff_w, &pooled, &p.ff_b)?;
    let h = pre.iter().copied().map(relu_scalar).collect();
    Ok(AmnnTrace {
        attention,
        pooled,
        pre,
        h,
    })
}

/// Gradients of `grad_h · h`; the head field of the returned bundle is zero.
pub fn amnn_backward(x: &Matrix, p: &AmnnParams, trace: &AmnnTrace, grad_h: &[f64]) -> Result<(AmnnParams, Matrix)> {
    if grad_h.len() != p.ff_b.len() {
        return Err(TagmError::shape("AM-NN grad_h length", p.ff_b.len(), grad_h.len()));
    }
    let mut g = AmnnParams::zeros(x.cols(), p.attention.hidden(), p.ff_b.len(), p.head.classes());
    let dpre: Vec<f64> = grad_h
        .iter()
        .zip(&trace.pre)
        .map(|(d, &z)| d * relu_grad(z))
        .collect();
    g.ff_w.add_outer(&dpre, &trace.pooled);
    axpy(1.0, &dpre, &mut g.ff_b);
    let mut dv = vec![0.0; x.cols()];
    p.ff_w.matvec_t_acc(&dpre, &mut dv);

    let grad_a: Vec<f64> = (0..x.rows()).map(|t| dot(&dv, x.row(t))).collect();
    let (ga, mut gx) = attention_backward(x, &p.attention, &trace.attention, &grad_a)?;
    g.attention = ga;
    for (t, &a) in trace.attention.a.iter().enumerate() {
        axpy(a, &dv, gx.row_mut(t));
    }
    Ok((g, gx))
}
