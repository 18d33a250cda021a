//! Sequences, datasets, the synthetic noisy-sequence generator, and the binary
//! file formats for datasets and checkpoints.

mod container;
pub mod checkpoint;
pub mod generator;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TagmError};
use crate::heads::{HeadMode, Label};
use crate::numerics::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use generator::{generate, GenConfig};
pub use io::{export_csv, load_dataset, save_dataset};

/// One labelled observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// `T × D` observations.
    pub x: Matrix,
    pub label: Label,
    /// Ground-truth salient timesteps, when known.
    pub mask: Option<Vec<bool>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn mask_density(&self) -> Option<f64> {
        self.mask
            .as_ref()
            .map(|m| m.iter().filter(|&&b| b).count() as f64 / m.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = TagmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(TagmError::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    /// Hex SHA-256 prefix of the generator configuration.
    pub config_hash: Option<String>,
    pub generator: Option<GenConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub classes: usize,
    pub mode: HeadMode,
    pub sequences: Vec<Sequence>,
    /// Split of each sequence, parallel to `sequences`.
    pub splits: Vec<Split>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks the cross-sequence invariants.
    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.sequences.len() {
            return Err(TagmError::shape("split assignments", self.sequences.len(), self.splits.len()));
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if s.is_empty() {
                return Err(TagmError::InvalidArgument(format!("sequence {i} is empty")));
            }
            if s.x.cols() != self.input_dim {
                return Err(TagmError::shape("sequence dimension", self.input_dim, format!("{} (sequence {i})", s.x.cols())));
            }
            if s.label.mode() != self.mode {
                return Err(TagmError::InvalidArgument(format!("sequence {i}: label kind does not match dataset mode")));
            }
            s.label.validate(self.classes)?;
            if let Some(m) = &s.mask {
                if m.len() != s.len() {
                    return Err(TagmError::shape("salience mask length", s.len(), format!("{} (sequence {i})", m.len())));
                }
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Sequence> {
        self.indices(split).into_iter().map(|i| &self.sequences[i]).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Keeps only the first `n` training sequences; other splits are untouched.
    pub fn with_train_limit(&self, n: usize) -> Dataset {
        let mut kept = 0;
        let mut out = self.clone();
        let mut sequences = Vec::new();
        let mut splits = Vec::new();
        for (s, &sp) in self.sequences.iter().zip(&self.splits) {
            if sp == Split::Train {
                if kept == n {
                    continue;
                }
                kept += 1;
            }
            sequences.push(s.clone());
            splits.push(sp);
        }
        out.sequences = sequences;
        out.splits = splits;
        out
    }

    pub fn summary(&self) -> DatasetSummary {
        let lens: Vec<usize> = self.sequences.iter().map(Sequence::len).collect();
        let densities: Vec<f64> = self.sequences.iter().filter_map(Sequence::mask_density).collect();
        let stats = |v: &[f64]| -> Option<(f64, f64, f64)> {
            if v.is_empty() {
                return None;
            }
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((min, v.iter().sum::<f64>() / v.len() as f64, max))
        };
        let lens_f: Vec<f64> = lens.iter().map(|&l| l as f64).collect();
        DatasetSummary {
            train: self.count(Split::Train),
            val: self.count(Split::Val),
            test: self.count(Split::Test),
            length: stats(&lens_f),
            mask_density: stats(&densities),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// (min, mean, max)
    pub length: Option<(f64, f64, f64)>,
    pub mask_density: Option<(f64, f64, f64)>,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sequences: train={} val={} test={}", self.train, self.val, self.test)?;
        if let Some((lo, mean, hi)) = self.length {
            writeln!(f, "length: min={lo} mean={mean:.2} max={hi}")?;
        }
        match self.mask_density {
            Some((lo, mean, hi)) => write!(f, "mask density: min={lo:.4} mean={mean:.4} max={hi:.4}"),
            None => write!(f, "mask density: n/a"),
        }
    }
}
