//! Dataset persistence (`TGMD` files) and CSV export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use super::{Dataset, Provenance, Sequence, Split};
use crate::error::{Result, TagmError};
use crate::heads::{HeadMode, Label};
use crate::numerics::Matrix;

pub const DATASET_MAGIC: &[u8; 4] = b"TGMD";

#[derive(Serialize, Deserialize)]
struct SequenceMeta {
    len: usize,
    split: Split,
    label: Label,
    has_mask: bool,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    input_dim: usize,
    classes: usize,
    mode: HeadMode,
    provenance: Provenance,
    sequences: Vec<SequenceMeta>,
}

/// Writes the dataset. Tensor order: for each sequence its `T × D`
/// observations, then its mask as 0/1 values when present.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ds.validate()?;
    let meta = DatasetMeta {
        input_dim: ds.input_dim,
        classes: ds.classes,
        mode: ds.mode,
        provenance: ds.provenance.clone(),
        sequences: ds
            .sequences
            .iter()
            .zip(&ds.splits)
            .map(|(s, &split)| SequenceMeta {
                len: s.len(),
                split,
                label: s.label.clone(),
                has_mask: s.mask.is_some(),
            })
            .collect(),
    };
    let mut tensors = Vec::new();
    for s in &ds.sequences {
        tensors.extend_from_slice(s.x.data());
        if let Some(m) = &s.mask {
            tensors.extend(m.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
    }
    container::write(path, DATASET_MAGIC, &serde_json::to_string(&meta)?, &tensors)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let contents = container::read(path, DATASET_MAGIC)?;
    let meta: DatasetMeta = serde_json::from_str(&contents.meta)?;
    let fail = |message: String| TagmError::Format {
        path: path.to_path_buf(),
        message,
    };

    let mut offset = 0;
    let mut sequences = Vec::with_capacity(meta.sequences.len());
    let mut splits = Vec::with_capacity(meta.sequences.len());
    let available = contents.tensors.len();
    for (i, sm) in meta.sequences.into_iter().enumerate() {
        let n = sm.len * meta.input_dim;
        let need = n + if sm.has_mask { sm.len } else { 0 };
        if offset + need > available {
            return Err(fail(format!(
                "sequence {i} declares {need} values at tensor offset {offset} but only {} remain",
                available - offset
            )));
        }
        let x = Matrix::from_vec(sm.len, meta.input_dim, contents.tensors[offset..offset + n].to_vec())
            .map_err(|e| fail(format!("sequence {i}: {e}")))?;
        offset += n;
        let mask = if sm.has_mask {
            let raw = &contents.tensors[offset..offset + sm.len];
            offset += sm.len;
            let mut m = Vec::with_capacity(sm.len);
            for (t, &v) in raw.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(fail(format!("sequence {i}, mask[{t}] = {v} is not binary")));
                }
                m.push(v == 1.0);
            }
            Some(m)
        } else {
            None
        };
        sequences.push(Sequence {
            x,
            label: sm.label,
            mask,
        });
        splits.push(sm.split);
    }
    if offset != available {
        return Err(fail(format!("{} unclaimed values after the last sequence", available - offset)));
    }
    let ds = Dataset {
        input_dim: meta.input_dim,
        classes: meta.classes,
        mode: meta.mode,
        sequences,
        splits,
        provenance: meta.provenance,
    };
    ds.validate().map_err(|e| fail(e.to_string()))?;
    Ok(ds)
}

fn label_field(label: &Label) -> String {
    match label {
        Label::Class(k) => k.to_string(),
        Label::Multi(hot) => hot
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| k.to_string())
            .collect::<Vec<_>>()
            .join(";"),
    }
}

/// One row per timestep: `sample_id,t,x_1..x_D,label,mask`.
pub fn export_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TagmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| TagmError::io(path, e);
    let xs: Vec<String> = (1..=ds.input_dim).map(|d| format!("x_{d}")).collect();
    writeln!(w, "sample_id,t,{},label,mask", xs.join(",")).map_err(io)?;
    for (id, s) in ds.sequences.iter().enumerate() {
        let label = label_field(&s.label);
        for t in 0..s.len() {
            let row: Vec<String> = s.x.row(t).iter().map(|v| v.to_string()).collect();
            let mask = match &s.mask {
                Some(m) => u8::from(m[t]).to_string(),
                None => String::new(),
            };
            writeln!(w, "{id},{t},{},{label},{mask}", row.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
