//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::heads::{HeadMode, Label};
use crate::model::{backward_full, forward_full, Model, ModelDims, ModelKind};
use crate::numerics::Matrix;
use crate::params::Parameters;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;
/// Instances with a ReLU pre-activation closer than this to the kink are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;
/// Instances with a nonzero gradient coordinate smaller than this are redrawn.
///
/// Each loss evaluation carries about one ulp of rounding, so a central
/// difference with step `h` has absolute noise near `ulp(L) / h ≈ 1e-11`.
/// Below roughly `1e-7` that noise alone exceeds the relative tolerance, and
/// the comparison says nothing about the analytic gradient.
pub const RESOLUTION_FLOOR: f64 = 1e-6;
const MAX_RESAMPLES: usize = 1000;

/// Central differences `(f(θ + h·e_i) - f(θ - h·e_i)) / 2h` for every coordinate.
pub fn central_difference(theta: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// How random instances are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Signed weights and Gaussian inputs.
    Random,
    /// Positive inputs, weights and biases, so every ReLU stays in its linear
    /// region.
    Positive,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub seq_len: usize,
    pub mode: HeadMode,
    pub regime: Regime,
    pub step: f64,
    pub tolerance: f64,
    /// See [`RESOLUTION_FLOOR`]; zero disables the redraw.
    pub resolution_floor: f64,
    /// Scale the largest analytic gradient coordinate by 1.01 before comparing.
    pub corrupt: bool,
}

impl GradCheckConfig {
    pub fn new(kind: ModelKind) -> Self {
        GradCheckConfig {
            kind,
            dims: ModelDims::new(3, 4, 3, 3),
            seq_len: 5,
            mode: HeadMode::Multiclass,
            regime: Regime::Random,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            resolution_floor: RESOLUTION_FLOOR,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over all coordinates.
    pub max_abs_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub coordinates: usize,
    pub resamples: usize,
    pub passed: bool,
    /// Worst relative error within each parameter tensor, in declared order.
    pub per_tensor: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub kind: String,
    pub tolerance: f64,
    pub seeds: Vec<SeedReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.seeds.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }
}

struct Instance {
    model: Model,
    x: Matrix,
    label: Label,
}

fn draw_instance(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let mut model = Model::zeros(cfg.kind, cfg.dims, cfg.mode)?;
    let (lo, hi) = match cfg.regime {
        Regime::Random => (-0.8, 0.8),
        Regime::Positive => (0.02, 0.3),
    };
    for t in model.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = rng.random_range(lo..hi);
        }
    }
    let n = cfg.seq_len * cfg.dims.input_dim;
    let data: Vec<f64> = match cfg.regime {
        Regime::Random => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        Regime::Positive => (0..n).map(|_| rng.random_range(0.1..1.0)).collect(),
    };
    let x = Matrix::from_vec(cfg.seq_len, cfg.dims.input_dim, data)?;
    let k = cfg.dims.classes;
    let label = match cfg.mode {
        HeadMode::Multiclass => Label::Class(rng.random_range(0..k)),
        HeadMode::Multilabel => Label::Multi((0..k).map(|_| rng.random::<bool>()).collect()),
    };
    Ok(Instance { model, x, label })
}

/// Checks one seed: analytic gradient of the full loss against central
/// differences over every parameter coordinate.
pub fn check_seed(cfg: &GradCheckConfig, seed: u64) -> Result<SeedReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resamples = 0;
    let (inst, grads) = loop {
        let inst = draw_instance(cfg, &mut rng)?;
        let fwd = forward_full(&inst.x, &inst.label, &inst.model, None)?;
        let near_kink = fwd.cache.min_abs_preactivation() < KINK_MARGIN;
        let grads = backward_full(&inst.x, &inst.model, &fwd)?.0;
        let unresolvable = grads
            .flatten()
            .iter()
            .any(|&g| g != 0.0 && g.abs() < cfg.resolution_floor);
        if !(near_kink || unresolvable) || resamples >= MAX_RESAMPLES {
            break (inst, grads);
        }
        resamples += 1;
    };
    let mut analytic = grads.flatten();
    if cfg.corrupt {
        let i = analytic
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > analytic[best].abs() { i } else { best });
        analytic[i] *= 1.01;
    }

    let theta = inst.model.flatten();
    let mut probe_model = inst.model.clone();
    let numeric = central_difference(&theta, cfg.step, |th| {
        probe_model.assign_flat(th);
        forward_full(&inst.x, &inst.label, &probe_model, None)
            .map(|f| f.loss)
            .unwrap_or(f64::NAN)
    });

    let mut worst = (0.0, 0usize);
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if !(e <= worst.0) {
            worst = (e, i);
        }
    }
    let (worst_tensor, worst_index) = locate(&inst.model, worst.1);
    let mut per_tensor = Vec::new();
    let mut offset = 0;
    for t in inst.model.tensors() {
        let n = t.data.len();
        let e = max_rel_error(&analytic[offset..offset + n], &numeric[offset..offset + n]);
        per_tensor.push((t.name, e));
        offset += n;
    }
    Ok(SeedReport {
        seed,
        max_rel_error: worst.0,
        max_abs_error: analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max),
        worst_tensor,
        worst_index,
        coordinates: theta.len(),
        resamples,
        passed: worst.0 < cfg.tolerance,
        per_tensor,
    })
}

fn locate(model: &Model, flat_index: usize) -> (&'static str, usize) {
    let mut offset = 0;
    for t in model.tensors() {
        if flat_index < offset + t.data.len() {
            return (t.name, flat_index - offset);
        }
        offset += t.data.len();
    }
    ("<none>", 0)
}

pub fn gradient_check(cfg: &GradCheckConfig, seeds: impl IntoIterator<Item = u64>) -> Result<GradCheckReport> {
    let seeds = seeds
        .into_iter()
        .map(|s| check_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let passed = seeds.iter().all(|s| s.passed);
    Ok(GradCheckReport {
        kind: cfg.kind.to_string(),
        tolerance: cfg.tolerance,
        seeds,
        passed,
    })
}
