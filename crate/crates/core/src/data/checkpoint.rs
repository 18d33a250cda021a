//! Model checkpoints (`TGMC` files).
//!
//! The tensor section holds every parameter in declared order
//! (`param_count · 8` bytes), optionally followed by the RMSprop
//! accumulators in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::error::{Result, TagmError};
use crate::heads::HeadMode;
use crate::model::{Model, ModelDims, ModelKind, INIT_SCHEME};
use crate::optim::RmspropState;
use crate::params::Parameters;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGMC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: ModelKind,
    mode: HeadMode,
    dims: ModelDims,
    init_scheme: String,
    seed: u64,
    param_count: usize,
    tensors: Vec<TensorMeta>,
    has_optimizer_state: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<RmspropState<Model>>,
    /// Seed the model was initialized from.
    pub seed: u64,
    pub init_scheme: String,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            seed,
            init_scheme: INIT_SCHEME.to_string(),
        }
    }
}

fn tensor_layout(model: &Model) -> Vec<TensorMeta> {
    model
        .tensors()
        .iter()
        .map(|t| TensorMeta {
            name: t.name.to_string(),
            len: t.data.len(),
        })
        .collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let model = &ckpt.model;
    if let Some((name, i)) = model.first_non_finite() {
        return Err(TagmError::NonFinite(format!("parameter {name}[{i}]; refusing to write checkpoint")));
    }
    let meta = CheckpointMeta {
        kind: model.kind(),
        mode: model.mode,
        dims: model.dims,
        init_scheme: ckpt.init_scheme.clone(),
        seed: ckpt.seed,
        param_count: model.param_count(),
        tensors: tensor_layout(model),
        has_optimizer_state: ckpt.optimizer.is_some(),
    };
    let mut tensors = model.flatten();
    if let Some(state) = &ckpt.optimizer {
        tensors.extend(state.mean_square.flatten());
    }
    container::write(path.as_ref(), CHECKPOINT_MAGIC, &serde_json::to_string(&meta)?, &tensors)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let contents = container::read(path, CHECKPOINT_MAGIC)?;
    let meta: CheckpointMeta = serde_json::from_str(&contents.meta)?;
    let fail = |message: String| TagmError::Format {
        path: path.to_path_buf(),
        message,
    };

    let mut model = Model::zeros(meta.kind, meta.dims, meta.mode).map_err(|e| fail(e.to_string()))?;
    let expected_layout = tensor_layout(&model);
    if expected_layout != meta.tensors {
        let first_bad = expected_layout
            .iter()
            .zip(&meta.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {} ({} values), found {} ({} values)", a.name, a.len, b.name, b.len))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", expected_layout.len(), meta.tensors.len()));
        return Err(fail(format!("tensor layout does not match declared dims {:?}: {first_bad}", meta.dims)));
    }
    let n = model.param_count();
    if meta.param_count != n {
        return Err(fail(format!("declared param_count {} but dims imply {n}", meta.param_count)));
    }
    let want = if meta.has_optimizer_state { 2 * n } else { n };
    if contents.tensors.len() != want {
        return Err(fail(format!(
            "tensor section holds {} values, expected {want}",
            contents.tensors.len()
        )));
    }
    if let Some(i) = contents.tensors.iter().position(|v| !v.is_finite()) {
        return Err(fail(format!("non-finite value at tensor offset {i}")));
    }
    model.assign_flat(&contents.tensors[..n]);
    let optimizer = meta.has_optimizer_state.then(|| {
        let mut ms = model.zeros_like();
        ms.assign_flat(&contents.tensors[n..]);
        RmspropState { mean_square: ms }
    });
    Ok(Checkpoint {
        model,
        optimizer,
        seed: meta.seed,
        init_scheme: meta.init_scheme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::container::HEADER_LEN;
    use crate::model::param_count;
    use crate::numerics::Matrix;

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgmc");
        for kind in ModelKind::ALL {
            let model = Model::init(kind, ModelDims::new(3, 5, 4, 6), HeadMode::Multiclass, 42).unwrap();
            let mut ckpt = Checkpoint::new(model.clone(), 42);
            let mut st = RmspropState::new(&model);
            st.mean_square.fill(0.25);
            ckpt.optimizer = Some(st);
            save_checkpoint(&ckpt, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back, ckpt);
            let probe = Matrix::from_rows(&[vec![0.1, -0.4, 2.0], vec![1.0, 0.0, -1.0]]).unwrap();
            let a = model.predict(&probe).unwrap();
            let b = back.model.predict(&probe).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn payload_size_follows_param_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgmc");
        let dims = ModelDims::new(13, 128, 64, 10);
        let model = Model::init(ModelKind::Tagm, dims, HeadMode::Multiclass, 1).unwrap();
        save_checkpoint(&Checkpoint::new(model, 1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let meta_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let tensor_bytes = bytes.len() as u64 - HEADER_LEN - 8 - meta_len;
        assert_eq!(tensor_bytes, 42_251 * 8);
        assert_eq!(tensor_bytes, param_count(&dims) as u64 * 8);
    }

    #[test]
    fn mismatched_layout_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tgmc");
        let model = Model::init(ModelKind::Tagm, ModelDims::new(3, 4, 4, 2), HeadMode::Multiclass, 1).unwrap();
        // rewrite metadata to declare different dims over the same tensor data
        let mut meta = CheckpointMeta {
            kind: ModelKind::Tagm,
            mode: HeadMode::Multiclass,
            dims: ModelDims::new(3, 4, 5, 2),
            init_scheme: INIT_SCHEME.into(),
            seed: 1,
            param_count: model.param_count(),
            tensors: tensor_layout(&model),
            has_optimizer_state: false,
        };
        container::write(&path, CHECKPOINT_MAGIC, &serde_json::to_string(&meta).unwrap(), &model.flatten()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("does not match declared dims"), "{err}");

        meta.dims = model.dims;
        container::write(&path, CHECKPOINT_MAGIC, &serde_json::to_string(&meta).unwrap(), &model.flatten()[1..]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn dataset_file_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        container::write(&path, b"TGMD", "{}", &[]).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("bad magic"));
    }
}
