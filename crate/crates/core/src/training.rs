//! Mini-batch training with RMSprop, validation-driven model selection, and
//! grid search over model sizes and dropout.
//!
//! Within a batch, per-sequence gradients are computed independently (in
//! parallel when allowed) and then summed in batch order, so a run is
//! bit-identical for any worker count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Result, TagmError};
use crate::exec::Execution;
use crate::heads::{argmax, HeadMode, Label};
use crate::model::{backward_full, forward_full, DropoutMask, Model, ModelDims, ModelKind};
use crate::optim::{rmsprop_step, RmspropConfig, RmspropState};
use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub attn_hidden: Vec<usize>,
    pub cell_hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            attn_hidden: vec![64, 128, 256],
            cell_hidden: vec![64, 128, 256],
            dropout: vec![0.0, 0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub fusion_lr_multiplier: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub dropout: f64,
    /// Sequences per gradient step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
    pub grid: GridConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = RmspropConfig::default();
        TrainConfig {
            learning_rate: opt.learning_rate,
            fusion_lr_multiplier: opt.fusion_lr_multiplier,
            rmsprop_decay: opt.decay,
            rmsprop_epsilon: opt.epsilon,
            clip_lo: opt.clip_lo,
            clip_hi: opt.clip_hi,
            dropout: 0.0,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            patience: 20,
            grid: GridConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TagmError::InvalidArgument(m));
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("fusion_lr_multiplier", self.fusion_lr_multiplier),
            ("rmsprop_epsilon", self.rmsprop_epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad(format!("rmsprop_decay must be in [0, 1), got {}", self.rmsprop_decay));
        }
        if !(self.clip_lo <= self.clip_hi) {
            return bad(format!("clip range is empty: {} > {}", self.clip_lo, self.clip_hi));
        }
        for p in std::iter::once(self.dropout).chain(self.grid.dropout.iter().copied()) {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout must be in [0, 1), got {p}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmspropConfig {
        RmspropConfig {
            learning_rate: self.learning_rate,
            fusion_lr_multiplier: self.fusion_lr_multiplier,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
            clip_lo: self.clip_lo,
            clip_hi: self.clip_hi,
        }
    }
}

/// Which model to train and how large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub attn_hidden: usize,
    pub cell_hidden: usize,
}

impl ModelSpec {
    pub fn dims(&self, ds: &Dataset) -> ModelDims {
        let attn = if self.kind.uses_attention() { self.attn_hidden } else { 0 };
        ModelDims::new(ds.input_dim, attn, self.cell_hidden, ds.classes)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Seconds since training started. Not part of any determinism guarantee.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub optimizer: RmspropState<Model>,
    pub log: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub sequences: usize,
    pub mean_loss: f64,
    /// Exact-match accuracy (argmax for multiclass, every label thresholded
    /// at 0.5 for multilabel).
    pub accuracy: f64,
    /// Multilabel only: average precision per class, `None` for classes
    /// without positives in the split.
    pub per_class_ap: Option<Vec<Option<f64>>>,
    pub mean_ap: Option<f64>,
}

impl EvalReport {
    /// The model-selection metric: accuracy, or mAP for multilabel heads.
    pub fn score(&self) -> f64 {
        self.mean_ap.unwrap_or(self.accuracy)
    }
}

/// Errors unless the model can consume the dataset.
pub fn check_compatible(model: &Model, ds: &Dataset) -> Result<()> {
    let d = model.dims;
    if d.input_dim != ds.input_dim {
        return Err(TagmError::shape("dataset dimension vs model input", d.input_dim, ds.input_dim));
    }
    if d.classes != ds.classes {
        return Err(TagmError::shape("dataset classes vs model head", d.classes, ds.classes));
    }
    if model.mode != ds.mode {
        return Err(TagmError::InvalidArgument(format!(
            "model head is {:?} but the dataset is {:?}",
            model.mode, ds.mode
        )));
    }
    Ok(())
}

fn is_correct(mode: HeadMode, probs: &[f64], label: &Label) -> bool {
    match (mode, label) {
        (HeadMode::Multiclass, Label::Class(y)) => argmax(probs) == *y,
        (_, Label::Multi(hot)) => probs.iter().zip(hot).all(|(&p, &h)| (p >= 0.5) == h),
        _ => false,
    }
}

/// Average precision of one class from scores and binary relevance.
/// Ties in score are broken by index, so the result is deterministic.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Dropout-free evaluation on one split.
pub fn evaluate(model: &Model, ds: &Dataset, split: Split, exec: Execution) -> Result<EvalReport> {
    check_compatible(model, ds)?;
    let ids = ds.indices(split);
    let outputs = exec
        .map(&ids, |_, &i| {
            let s = &ds.sequences[i];
            forward_full(&s.x, &s.label, model, None).map(|f| (f.loss, f.probs))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = ids.len();
    let denom = n.max(1) as f64;
    let mean_loss = outputs.iter().map(|(l, _)| l).sum::<f64>() / denom;
    let correct = ids
        .iter()
        .zip(&outputs)
        .filter(|(&i, (_, p))| is_correct(model.mode, p, &ds.sequences[i].label))
        .count();

    let (per_class_ap, mean_ap) = match model.mode {
        HeadMode::Multiclass => (None, None),
        HeadMode::Multilabel => {
            let aps: Vec<Option<f64>> = (0..ds.classes)
                .map(|k| {
                    let scores: Vec<f64> = outputs.iter().map(|(_, p)| p[k]).collect();
                    let rel: Vec<bool> = ids.iter().map(|&i| ds.sequences[i].label.indicator(ds.classes)[k] == 1.0).collect();
                    average_precision(&scores, &rel)
                })
                .collect();
            let defined: Vec<f64> = aps.iter().flatten().copied().collect();
            let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            (Some(aps), Some(mean.unwrap_or(0.0)))
        }
    };
    Ok(EvalReport {
        split,
        sequences: n,
        mean_loss,
        accuracy: correct as f64 / denom,
        per_class_ap,
        mean_ap,
    })
}

/// Purpose tags for the derived RNG streams.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Independent RNG for (purpose, epoch, position), derived from the run seed.
fn derived_rng(seed: u64, purpose: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | ((epoch as u64) << 28) | position as u64);
    rng
}

struct SequenceStep {
    loss: f64,
    correct: bool,
    grads: Model,
}

fn sequence_step(model: &Model, ds: &Dataset, id: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Result<SequenceStep> {
    let s = &ds.sequences[id];
    let mask = DropoutMask::sample(dropout, s.len(), ds.input_dim, model.head().w.cols(), rng);
    let fwd = forward_full(&s.x, &s.label, model, mask.as_ref())?;
    let (grads, _) = backward_full(&s.x, model, &fwd)?;
    Ok(SequenceStep {
        loss: fwd.loss,
        correct: is_correct(model.mode, &fwd.probs, &s.label),
        grads,
    })
}

/// Sums per-sequence losses and averages gradients, in batch order.
fn reduce_steps(model: &Model, steps: &[SequenceStep]) -> (f64, Model) {
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    for s in steps {
        grads.add_assign(&s.grads);
        loss += s.loss;
    }
    grads.scale(1.0 / steps.len().max(1) as f64);
    (loss, grads)
}

/// Mean loss and mean gradient over the sequences `batch` (dataset indices),
/// without dropout.
pub fn batch_gradient(model: &Model, ds: &Dataset, batch: &[usize], exec: Execution) -> Result<(f64, Model)> {
    check_compatible(model, ds)?;
    // a zero dropout rate never draws from the RNG
    let steps = exec
        .map(batch, |_, &id| sequence_step(model, ds, id, 0.0, &mut ChaCha8Rng::seed_from_u64(0)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = reduce_steps(model, &steps);
    Ok((loss / steps.len().max(1) as f64, grads))
}

/// Trains one model. `cfg.dropout` is the dropout rate; `cfg.grid` is ignored.
pub fn train(ds: &Dataset, spec: ModelSpec, cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    let train_ids = ds.indices(Split::Train);
    if train_ids.is_empty() {
        return Err(TagmError::InvalidArgument("dataset has no training sequences".into()));
    }
    if ds.count(Split::Val) == 0 {
        return Err(TagmError::InvalidArgument("dataset has no validation sequences".into()));
    }
    let mut model = Model::init(spec.kind, spec.dims(ds), ds.mode, cfg.seed)?;
    let opt = cfg.optimizer();
    let mut state = RmspropState::new(&model);
    let mut best = (model.clone(), state.clone(), 0usize, None::<f64>);
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut order = train_ids.clone();
        order.shuffle(&mut derived_rng(cfg.seed, STREAM_SHUFFLE, epoch, 0));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let offset = b * cfg.batch_size;
            let steps = exec
                .map(batch, |j, &id| {
                    let mut rng = derived_rng(cfg.seed, STREAM_DROPOUT, epoch, offset + j);
                    sequence_step(&model, ds, id, cfg.dropout, &mut rng)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            correct += steps.iter().filter(|s| s.correct).count();
            let (batch_loss, grads) = reduce_steps(&model, &steps);
            if !batch_loss.is_finite() {
                return Err(TagmError::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss / steps.len() as f64,
                });
            }
            loss_sum += batch_loss;
            rmsprop_step(&mut model, &grads, &mut state, &opt)?;
        }
        if let Some((name, i)) = model.first_non_finite() {
            return Err(TagmError::NonFinite(format!("parameter {name}[{i}] after epoch {epoch}")));
        }

        let val = evaluate(&model, ds, Split::Val, exec)?.score();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_acc: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} train {:.4} val {:.4}",
            spec.kind,
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        log.push(record);
        if best.3.is_none_or(|b| val > b) {
            best = (model.clone(), state.clone(), epoch, Some(val));
        } else if cfg.patience > 0 && epoch - best.2 >= cfg.patience {
            log::info!("no validation improvement for {} epochs; stopping", cfg.patience);
            break;
        }
    }
    let (model, optimizer, best_epoch, best_val) = best;
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
        best_epoch,
        best_val,
    })
}

/// One cell of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub attn_hidden: usize,
    pub cell_hidden: usize,
    pub dropout: f64,
    pub params: usize,
    pub best_epoch: usize,
    pub val_score: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the selected configuration.
    pub selected: usize,
    pub outcome: TrainOutcome,
}

/// Every (attention size, cell size, dropout) combination, in grid order.
/// The plain RNN has no attention module, so that axis collapses.
pub fn grid_cells(kind: ModelKind, grid: &GridConfig) -> Vec<(usize, usize, f64)> {
    let attn: Vec<usize> = if kind.uses_attention() { grid.attn_hidden.clone() } else { vec![0] };
    let mut cells = Vec::new();
    for &a in &attn {
        for &c in &grid.cell_hidden {
            for &p in &grid.dropout {
                cells.push((a, c, p));
            }
        }
    }
    cells
}

/// Trains one model per grid cell and keeps the best by validation score;
/// ties go to the fewest parameters, then to the earliest cell.
pub fn grid_search(ds: &Dataset, kind: ModelKind, cfg: &TrainConfig, exec: Execution) -> Result<GridResult> {
    cfg.validate()?;
    let cells = grid_cells(kind, &cfg.grid);
    if cells.is_empty() {
        return Err(TagmError::InvalidArgument("grid is empty".into()));
    }
    let outcomes = exec
        .map(&cells, |_, &(a, c, p)| {
            let spec = ModelSpec {
                kind,
                attn_hidden: a,
                cell_hidden: c,
            };
            let cell_cfg = TrainConfig {
                dropout: p,
                ..cfg.clone()
            };
            train(ds, spec, &cell_cfg, exec)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<GridRow> = cells
        .iter()
        .zip(&outcomes)
        .map(|(&(a, c, p), o)| GridRow {
            attn_hidden: a,
            cell_hidden: c,
            dropout: p,
            params: o.model.param_count(),
            best_epoch: o.best_epoch,
            val_score: o.best_val.unwrap_or(f64::NEG_INFINITY),
        })
        .collect();
    let selected = select_row(&rows);
    let outcome = outcomes.into_iter().nth(selected).expect("selected row exists");
    Ok(GridResult { rows, selected, outcome })
}

fn select_row(rows: &[GridRow]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best];
        if r.val_score > b.val_score || (r.val_score == b.val_score && r.params < b.params) {
            best = i;
        }
    }
    best
}
