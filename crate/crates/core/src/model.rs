//! Full models (TAGM and the two baselines) behind one type, plus the
//! end-to-end forward and backward passes through head and loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_backward, attention_forward, AttentionParams, AttentionTrace};
use crate::baselines::{
    amnn_backward, amnn_forward, plain_rnn_backward, plain_rnn_forward, AmnnParams, AmnnTrace, PlainRnnParams,
    RnnTrace,
};
use crate::error::{Result, TagmError};
use crate::gated_unit::{cell_backward, cell_forward, CellParams, CellTrace};
use crate::heads::{head_loss, head_probs, HeadMode, HeadParams, Label, LossOutput};
use crate::numerics::Matrix;
use crate::params::{Parameters, TensorMut, TensorRef};

/// Name of the weight initialization scheme, recorded in checkpoints.
pub const INIT_SCHEME: &str = "glorot-uniform/zero-bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tagm,
    Rnn,
    Amnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Tagm, ModelKind::Rnn, ModelKind::Amnn];

    pub fn uses_attention(self) -> bool {
        !matches!(self, ModelKind::Rnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Tagm => "tagm",
            ModelKind::Rnn => "rnn",
            ModelKind::Amnn => "amnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = TagmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tagm" => Ok(ModelKind::Tagm),
            "rnn" => Ok(ModelKind::Rnn),
            "amnn" => Ok(ModelKind::Amnn),
            other => Err(TagmError::InvalidArgument(format!(
                "unknown model '{other}' (expected tagm, rnn or amnn)"
            ))),
        }
    }
}

/// Sizes of a model. `attn_hidden` is ignored by the plain RNN; `cell_hidden`
/// is the recurrent size for TAGM and the RNN and the feed-forward size for AM-NN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub attn_hidden: usize,
    pub cell_hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, attn_hidden: usize, cell_hidden: usize, classes: usize) -> Self {
        ModelDims {
            input_dim,
            attn_hidden,
            cell_hidden,
            classes,
        }
    }

    fn validate(&self, kind: ModelKind) -> Result<()> {
        let attn_ok = !kind.uses_attention() || self.attn_hidden > 0;
        if self.input_dim == 0 || self.cell_hidden == 0 || self.classes == 0 || !attn_ok {
            return Err(TagmError::InvalidArgument(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Closed-form parameter count of a TAGM model:
/// two attention RNNs, the fusion layer, the gated cell, and the head.
pub fn param_count(dims: &ModelDims) -> usize {
    let ModelDims {
        input_dim: d,
        attn_hidden: ha,
        cell_hidden: hc,
        classes: k,
    } = *dims;
    2 * (ha * d + ha * ha + ha) + (2 * ha + 1) + (hc * hc + hc * d + hc) + k * (hc + 1)
}

/// Parameter count for any model kind.
pub fn param_count_for(kind: ModelKind, dims: &ModelDims) -> usize {
    let ModelDims {
        input_dim: d,
        attn_hidden: ha,
        cell_hidden: h,
        classes: k,
    } = *dims;
    let head = k * (h + 1);
    let attention = 2 * (ha * d + ha * ha + ha) + (2 * ha + 1);
    match kind {
        ModelKind::Tagm => param_count(dims),
        ModelKind::Rnn => h * d + h * h + h + head,
        ModelKind::Amnn => attention + h * d + h + head,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagmParams {
    pub attention: AttentionParams,
    pub cell: CellParams,
    pub head: HeadParams,
}

impl Parameters for TagmParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.attention.tensors();
        v.extend(self.cell.tensors());
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.attention.tensors_mut();
        v.extend(self.cell.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Tagm(TagmParams),
    Rnn(PlainRnnParams),
    Amnn(AmnnParams),
}

/// A classifier: architecture parameters, the head mode, and declared sizes.
///
/// Gradients use the same type; see [`Parameters::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub mode: HeadMode,
    pub dims: ModelDims,
}

/// Intermediate state of the representation network for one sequence.
#[derive(Debug, Clone)]
pub enum RepresentationCache {
    Tagm { attention: AttentionTrace, cell: CellTrace },
    Rnn(RnnTrace),
    Amnn(AmnnTrace),
}

impl RepresentationCache {
    pub fn attention_scores(&self) -> Option<&[f64]> {
        match self {
            RepresentationCache::Tagm { attention, .. } => Some(&attention.a),
            RepresentationCache::Amnn(tr) => Some(&tr.attention.a),
            RepresentationCache::Rnn(_) => None,
        }
    }

    pub fn min_abs_preactivation(&self) -> f64 {
        match self {
            RepresentationCache::Tagm { attention, cell } => {
                attention.min_abs_preactivation().min(cell.min_abs_preactivation())
            }
            RepresentationCache::Rnn(tr) => tr.min_abs_preactivation(),
            RepresentationCache::Amnn(tr) => tr.min_abs_preactivation(),
        }
    }
}

impl Model {
    pub fn zeros(kind: ModelKind, dims: ModelDims, mode: HeadMode) -> Result<Self> {
        dims.validate(kind)?;
        let ModelDims {
            input_dim: d,
            attn_hidden: ha,
            cell_hidden: h,
            classes: k,
        } = dims;
        let arch = match kind {
            ModelKind::Tagm => Architecture::Tagm(TagmParams {
                attention: AttentionParams::zeros(d, ha),
                cell: CellParams::zeros(d, h),
                head: HeadParams::zeros(h, k),
            }),
            ModelKind::Rnn => Architecture::Rnn(PlainRnnParams::zeros(d, h, k)),
            ModelKind::Amnn => Architecture::Amnn(AmnnParams::zeros(d, ha, h, k)),
        };
        Ok(Model { arch, mode, dims })
    }

    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(kind: ModelKind, dims: ModelDims, mode: HeadMode, seed: u64) -> Result<Self> {
        dims.validate(kind)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::init_with(kind, dims, mode, &mut rng))
    }

    fn init_with<R: Rng + ?Sized>(kind: ModelKind, dims: ModelDims, mode: HeadMode, rng: &mut R) -> Self {
        let ModelDims {
            input_dim: d,
            attn_hidden: ha,
            cell_hidden: h,
            classes: k,
        } = dims;
        let arch = match kind {
            ModelKind::Tagm => {
                let attention = AttentionParams::init(d, ha, rng);
                let cell = CellParams::init(d, h, rng);
                let head = HeadParams::init(h, k, rng);
                Architecture::Tagm(TagmParams { attention, cell, head })
            }
            ModelKind::Rnn => Architecture::Rnn(PlainRnnParams::init(d, h, k, rng)),
            ModelKind::Amnn => Architecture::Amnn(AmnnParams::init(d, ha, h, k, rng)),
        };
        Model { arch, mode, dims }
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Architecture::Tagm(_) => ModelKind::Tagm,
            Architecture::Rnn(_) => ModelKind::Rnn,
            Architecture::Amnn(_) => ModelKind::Amnn,
        }
    }

    pub fn head(&self) -> &HeadParams {
        match &self.arch {
            Architecture::Tagm(p) => &p.head,
            Architecture::Rnn(p) => &p.head,
            Architecture::Amnn(p) => &p.head,
        }
    }

    fn head_mut(&mut self) -> &mut HeadParams {
        match &mut self.arch {
            Architecture::Tagm(p) => &mut p.head,
            Architecture::Rnn(p) => &mut p.head,
            Architecture::Amnn(p) => &mut p.head,
        }
    }

    pub fn attention(&self) -> Option<&AttentionParams> {
        match &self.arch {
            Architecture::Tagm(p) => Some(&p.attention),
            Architecture::Amnn(p) => Some(&p.attention),
            Architecture::Rnn(_) => None,
        }
    }

    pub fn attention_mut(&mut self) -> Option<&mut AttentionParams> {
        match &mut self.arch {
            Architecture::Tagm(p) => Some(&mut p.attention),
            Architecture::Amnn(p) => Some(&mut p.attention),
            Architecture::Rnn(_) => None,
        }
    }

    /// Hidden representation fed to the head (`h_T` for the recurrent models).
    pub fn represent(&self, x: &Matrix) -> Result<(Vec<f64>, RepresentationCache)> {
        if x.cols() != self.dims.input_dim {
            return Err(TagmError::shape("sequence dimension vs model", self.dims.input_dim, x.cols()));
        }
        match &self.arch {
            Architecture::Tagm(p) => {
                let attention = attention_forward(x, &p.attention)?;
                let cell = cell_forward(x, &attention.a, &p.cell)?;
                let h = cell.final_state().to_vec();
                Ok((h, RepresentationCache::Tagm { attention, cell }))
            }
            Architecture::Rnn(p) => {
                let tr = plain_rnn_forward(x, p)?;
                Ok((tr.final_state().to_vec(), RepresentationCache::Rnn(tr)))
            }
            Architecture::Amnn(p) => {
                let tr = amnn_forward(x, p)?;
                Ok((tr.h.clone(), RepresentationCache::Amnn(tr)))
            }
        }
    }

    /// Accumulates representation-network gradients for `grad_h` into `grads`
    /// and returns the gradient with respect to `x`.
    pub fn represent_backward(
        &self,
        x: &Matrix,
        cache: &RepresentationCache,
        grad_h: &[f64],
        grads: &mut Model,
    ) -> Result<Matrix> {
        match (&self.arch, cache, &mut grads.arch) {
            (Architecture::Tagm(p), RepresentationCache::Tagm { attention, cell }, Architecture::Tagm(g)) => {
                let cg = cell_backward(x, &attention.a, &p.cell, cell, grad_h)?;
                let (ga, gx_att) = attention_backward(x, &p.attention, attention, &cg.grad_a)?;
                g.cell.add_assign(&cg.params);
                g.attention.add_assign(&ga);
                let mut gx = cg.grad_x;
                for (o, v) in gx.data_mut().iter_mut().zip(gx_att.data()) {
                    *o += v;
                }
                Ok(gx)
            }
            (Architecture::Rnn(p), RepresentationCache::Rnn(tr), Architecture::Rnn(g)) => {
                let (gr, gx) = plain_rnn_backward(x, p, tr, grad_h)?;
                g.add_assign(&gr);
                Ok(gx)
            }
            (Architecture::Amnn(p), RepresentationCache::Amnn(tr), Architecture::Amnn(g)) => {
                let (ga, gx) = amnn_backward(x, p, tr, grad_h)?;
                g.add_assign(&ga);
                Ok(gx)
            }
            _ => Err(TagmError::InvalidArgument(
                "cache or gradient bundle does not match the model architecture".into(),
            )),
        }
    }

    /// Attention scores for a sequence, for models that have an attention module.
    pub fn attention_scores(&self, x: &Matrix) -> Result<Option<Vec<f64>>> {
        match self.attention() {
            Some(p) => Ok(Some(attention_forward(x, p)?.a)),
            None => Ok(None),
        }
    }

    /// Inference: class probabilities for one sequence, no dropout.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let (h, _) = self.represent(x)?;
        Ok(head_probs(self.mode, &self.head().logits(&h)?))
    }
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        match &self.arch {
            Architecture::Tagm(p) => p.tensors(),
            Architecture::Rnn(p) => p.tensors(),
            Architecture::Amnn(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        match &mut self.arch {
            Architecture::Tagm(p) => p.tensors_mut(),
            Architecture::Rnn(p) => p.tensors_mut(),
            Architecture::Amnn(p) => p.tensors_mut(),
        }
    }
}

/// Inverted-dropout scale factors (`0` or `1/(1-p)`) for one training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// `T × D`, shared by every consumer of the observations.
    pub input: Matrix,
    /// Applied to the representation before the head.
    pub hidden: Vec<f64>,
}

impl DropoutMask {
    /// Samples a mask; returns `None` when `rate` is zero so training and
    /// inference take the same code path.
    pub fn sample<R: Rng + ?Sized>(rate: f64, t_len: usize, input_dim: usize, hidden: usize, rng: &mut R) -> Option<Self> {
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let input = Matrix::from_vec(t_len, input_dim, draw(t_len * input_dim)).expect("finite scale factors");
        let hidden = draw(hidden);
        Some(DropoutMask { input, hidden })
    }
}

/// Everything one end-to-end forward pass produces.
#[derive(Debug, Clone)]
pub struct FullForward {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_logits: Vec<f64>,
    /// Observations after input dropout (equal to the input when no mask).
    pub x_used: Option<Matrix>,
    /// Representation after dropout, as seen by the head.
    pub head_input: Vec<f64>,
    pub cache: RepresentationCache,
    pub mask: Option<DropoutMask>,
}

impl FullForward {
    pub fn attention_scores(&self) -> Option<&[f64]> {
        self.cache.attention_scores()
    }
}

fn scale_rows(x: &Matrix, mask: &Matrix) -> Matrix {
    let data = x.data().iter().zip(mask.data()).map(|(v, m)| v * m).collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("finite")
}

/// Attention → gated cell (or baseline) → head → loss.
pub fn forward_full(x: &Matrix, label: &Label, model: &Model, mask: Option<&DropoutMask>) -> Result<FullForward> {
    label.validate(model.dims.classes)?;
    if let Some(m) = mask {
        if m.input.rows() != x.rows() || m.input.cols() != x.cols() || m.hidden.len() != model.head().w.cols() {
            return Err(TagmError::shape(
                "dropout mask",
                format!("{}x{} / {}", x.rows(), x.cols(), model.head().w.cols()),
                format!("{} / {}", m.input.shape_string(), m.hidden.len()),
            ));
        }
    }
    let x_used = mask.map(|m| scale_rows(x, &m.input));
    let (h, cache) = model.represent(x_used.as_ref().unwrap_or(x))?;
    let head_input: Vec<f64> = match mask {
        Some(m) => h.iter().zip(&m.hidden).map(|(v, s)| v * s).collect(),
        None => h,
    };
    let logits = model.head().logits(&head_input)?;
    let (probs, LossOutput { loss, grad_logits }) = head_loss(model.mode, &logits, label)?;
    Ok(FullForward {
        loss,
        probs,
        grad_logits,
        x_used,
        head_input,
        cache,
        mask: mask.cloned(),
    })
}

/// Gradients of the loss from [`forward_full`] with respect to every
/// parameter tensor and to the raw input sequence.
pub fn backward_full(x: &Matrix, model: &Model, fwd: &FullForward) -> Result<(Model, Matrix)> {
    let mut grads = model.zeros_like();
    let grad_head_input = model.head().backward(&fwd.head_input, &fwd.grad_logits, grads.head_mut());
    let grad_h: Vec<f64> = match &fwd.mask {
        Some(m) => grad_head_input.iter().zip(&m.hidden).map(|(g, s)| g * s).collect(),
        None => grad_head_input,
    };
    let x_used = fwd.x_used.as_ref().unwrap_or(x);
    let gx_used = model.represent_backward(x_used, &fwd.cache, &grad_h, &mut grads)?;
    let gx = match &fwd.mask {
        Some(m) => scale_rows(&gx_used, &m.input),
        None => gx_used,
    };
    Ok((grads, gx))
}
