//! Classifier heads on top of the final hidden state, and their losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::numerics::{affine, sigmoid, softmax_stable, Matrix};
use crate::params::{glorot_matrix, tensor_mut, tensor_ref, Group, Parameters, TensorMut, TensorRef};

/// Probabilities are clamped away from 0 and 1 by this much before any log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Softmax over K classes, negative log-likelihood.
    Multiclass,
    /// Independent sigmoid per class, joint binary cross-entropy.
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Class(usize),
    Multi(Vec<bool>),
}

impl Label {
    pub fn mode(&self) -> HeadMode {
        match self {
            Label::Class(_) => HeadMode::Multiclass,
            Label::Multi(_) => HeadMode::Multilabel,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            Label::Class(y) if *y >= classes => Err(TagmError::InvalidArgument(format!(
                "class index {y} out of range for {classes} classes"
            ))),
            Label::Multi(v) if v.len() != classes => {
                Err(TagmError::shape("multilabel target length", classes, v.len()))
            }
            _ => Ok(()),
        }
    }

    /// Target indicator vector (one-hot for a single class).
    pub fn indicator(&self, classes: usize) -> Vec<f64> {
        match self {
            Label::Class(y) => (0..classes).map(|k| if k == *y { 1.0 } else { 0.0 }).collect(),
            Label::Multi(v) => v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `K × H`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(hidden: usize, classes: usize) -> Self {
        HeadParams {
            w: Matrix::zeros(classes, hidden),
            b: vec![0.0; classes],
        }
    }

    pub fn init<R: Rng + ?Sized>(hidden: usize, classes: usize, rng: &mut R) -> Self {
        HeadParams {
            w: glorot_matrix(classes, hidden, rng),
            b: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        affine(&self.w, h, &self.b)
    }

    /// Accumulates head gradients for `grad_logits` and returns the gradient
    /// with respect to the hidden input.
    pub(crate) fn backward(&self, h: &[f64], grad_logits: &[f64], grads: &mut HeadParams) -> Vec<f64> {
        grads.w.add_outer(grad_logits, h);
        for (g, d) in grads.b.iter_mut().zip(grad_logits) {
            *g += d;
        }
        let mut gh = vec![0.0; h.len()];
        self.w.matvec_t_acc(grad_logits, &mut gh);
        gh
    }
}

impl Parameters for HeadParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tensor_ref!("head.w", Group::Default, matrix self.w),
            tensor_ref!("head.b", Group::Default, vector self.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            tensor_mut!("head.w", Group::Default, matrix self.w),
            tensor_mut!("head.b", Group::Default, vector self.b),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_logits: Vec<f64>,
}

pub fn softmax_head(h: &[f64], p: &HeadParams) -> Result<Vec<f64>> {
    Ok(softmax_stable(&p.logits(h)?))
}

pub fn sigmoid_head(h: &[f64], p: &HeadParams) -> Result<Vec<f64>> {
    Ok(p.logits(h)?.into_iter().map(sigmoid).collect())
}

/// Negative log-likelihood of class `y` under softmax probabilities, with the
/// gradient taken with respect to the softmax logits.
pub fn nll_loss(probs: &[f64], y: usize) -> Result<LossOutput> {
    if y >= probs.len() {
        return Err(TagmError::InvalidArgument(format!(
            "class index {y} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs[y].max(PROB_FLOOR).ln();
    let mut grad_logits = probs.to_vec();
    grad_logits[y] -= 1.0;
    Ok(LossOutput { loss, grad_logits })
}

/// Joint binary cross-entropy over independent sigmoid outputs; the gradient
/// is with respect to the sigmoid logits.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> Result<LossOutput> {
    if probs.len() != targets.len() {
        return Err(TagmError::shape("bce_loss targets", probs.len(), targets.len()));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(TagmError::InvalidArgument(format!("non-binary target {t}")));
    }
    let mut loss = 0.0;
    for (&p, &t) in probs.iter().zip(targets) {
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    let grad_logits = probs.iter().zip(targets).map(|(p, t)| p - t).collect();
    Ok(LossOutput { loss, grad_logits })
}

/// Head output for one representation: probabilities, loss and logit gradient.
pub(crate) fn head_loss(mode: HeadMode, logits: &[f64], label: &Label) -> Result<(Vec<f64>, LossOutput)> {
    match (mode, label) {
        (HeadMode::Multiclass, Label::Class(y)) => {
            let probs = softmax_stable(logits);
            let out = nll_loss(&probs, *y)?;
            Ok((probs, out))
        }
        (HeadMode::Multilabel, Label::Multi(_)) => {
            let probs: Vec<f64> = logits.iter().copied().map(sigmoid).collect();
            let out = bce_loss(&probs, &label.indicator(logits.len()))?;
            Ok((probs, out))
        }
        (mode, label) => Err(TagmError::InvalidArgument(format!(
            "label {label:?} does not match head mode {mode:?}"
        ))),
    }
}

pub(crate) fn head_probs(mode: HeadMode, logits: &[f64]) -> Vec<f64> {
    match mode {
        HeadMode::Multiclass => softmax_stable(logits),
        HeadMode::Multilabel => logits.iter().copied().map(sigmoid).collect(),
    }
}

/// Index of the largest entry; the earliest wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
