//! RMSprop with elementwise gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::numerics::clip_in_place;
use crate::params::{Group, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    /// Multiplier on the learning rate of the attention fusion layer.
    pub fusion_lr_multiplier: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            learning_rate: 1e-3,
            fusion_lr_multiplier: 1.0,
            decay: 0.9,
            epsilon: 1e-8,
            clip_lo: -5.0,
            clip_hi: 5.0,
        }
    }
}

/// Running mean of squared gradients, one accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<P> {
    pub mean_square: P,
}

impl<P: Parameters> RmspropState<P> {
    pub fn new(params: &P) -> Self {
        RmspropState {
            mean_square: params.zeros_like(),
        }
    }
}

/// One update: clip, refresh accumulators, step.
///
/// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g/√(s + ε)`.
pub fn rmsprop_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut RmspropState<P>,
    cfg: &RmspropConfig,
) -> Result<()> {
    if let Some((name, i)) = grads.first_non_finite() {
        return Err(TagmError::NonFinite(format!("gradient {name}[{i}]")));
    }
    if !(cfg.clip_lo <= cfg.clip_hi) {
        return Err(TagmError::InvalidArgument(format!(
            "clip range is empty: {} > {}",
            cfg.clip_lo, cfg.clip_hi
        )));
    }
    let rho = cfg.decay;
    for ((p, g), s) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.mean_square.tensors_mut())
    {
        let lr = match p.group {
            Group::Fusion => cfg.learning_rate * cfg.fusion_lr_multiplier,
            Group::Default => cfg.learning_rate,
        };
        let mut g = g.data.to_vec();
        clip_in_place(&mut g, cfg.clip_lo, cfg.clip_hi)?;
        for ((theta, gi), si) in p.data.iter_mut().zip(&g).zip(s.data.iter_mut()) {
            *si = rho * *si + (1.0 - rho) * gi * gi;
            *theta -= lr * gi / (*si + cfg.epsilon).sqrt();
        }
    }
    Ok(())
}
