//! Synthetic noisy-sequence benchmark.
//!
//! Each sample is a class template (a multichannel sinusoid whose frequency
//! encodes the class) surrounded by white-noise segments of random length.
//! The salience mask marks the template span.

use std::f64::consts::PI;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Provenance, Sequence, Split};
use crate::error::{Result, TagmError};
use crate::exec::Execution;
use crate::heads::{HeadMode, Label};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub classes: usize,
    pub dim: usize,
    pub salient_min: usize,
    pub salient_max: usize,
    pub pad_min: usize,
    pub pad_max: usize,
    /// Standard deviation of the white-noise padding.
    pub noise_sigma: f64,
    /// Standard deviation of the Gaussian jitter added to templates.
    pub jitter_sigma: f64,
    /// Peak amplitude of the class templates.
    pub amplitude: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Emit several templates per sample with a multi-hot label.
    pub multilabel: bool,
    pub max_labels: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            classes: 10,
            dim: 13,
            salient_min: 20,
            salient_max: 40,
            pad_min: 10,
            pad_max: 30,
            noise_sigma: 0.5,
            jitter_sigma: 0.1,
            amplitude: 2.0,
            n_train: 3000,
            n_val: 500,
            n_test: 1500,
            seed: 0,
            multilabel: false,
            max_labels: 2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TagmError::InvalidArgument(m));
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.salient_min == 0 || self.salient_min > self.salient_max {
            return bad(format!(
                "salient length range [{}, {}] is empty or starts at 0",
                self.salient_min, self.salient_max
            ));
        }
        if self.pad_min > self.pad_max {
            return bad(format!("pad length range [{}, {}] is empty", self.pad_min, self.pad_max));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("jitter_sigma", self.jitter_sigma),
            ("amplitude", self.amplitude),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.n_train + self.n_val + self.n_test == 0 {
            return bad("at least one sample must be requested".into());
        }
        if self.multilabel && self.max_labels == 0 {
            return bad("max_labels must be at least 1".into());
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Template frequency of class `k`, in cycles per timestep.
    pub fn frequency(&self, class: usize) -> f64 {
        (class + 1) as f64 / (2.0 * self.salient_max as f64)
    }

    /// Noise-free template of class `k` with `len` timesteps.
    pub fn template(&self, class: usize, len: usize) -> Matrix {
        let f = self.frequency(class);
        let d = self.dim;
        let mut m = Matrix::zeros(len, d);
        for t in 0..len {
            for c in 0..d {
                let phase = 2.0 * PI * f * t as f64 + c as f64 * PI / d as f64;
                m.set(t, c, self.amplitude * phase.sin());
            }
        }
        m
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// RNG for sample `index`: the configured seed with the index as ChaCha stream.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn push_noise<R: Rng>(rows: &mut Vec<f64>, len: usize, dim: usize, noise: &Normal<f64>, rng: &mut R) {
    rows.extend((0..len * dim).map(|_| noise.sample(rng)));
}

fn generate_sample(cfg: &GenConfig, index: usize) -> Sequence {
    let mut rng = sample_rng(cfg.seed, index);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let jitter = Normal::new(0.0, cfg.jitter_sigma).expect("validated sigma");

    let classes: Vec<usize> = if cfg.multilabel {
        let n = rng.random_range(1..=cfg.max_labels.min(cfg.classes));
        let mut picked = sample_indices(&mut rng, cfg.classes, n).into_vec();
        picked.sort_unstable();
        picked
    } else {
        vec![rng.random_range(0..cfg.classes)]
    };
    // template order is random so position does not leak the class
    let mut order = classes.clone();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }

    let d = cfg.dim;
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let lead = rng.random_range(cfg.pad_min..=cfg.pad_max);
    push_noise(&mut data, lead, d, &noise, &mut rng);
    mask.extend(std::iter::repeat_n(false, lead));
    for (j, &k) in order.iter().enumerate() {
        if j > 0 {
            let gap = rng.random_range(cfg.pad_min..=cfg.pad_max);
            push_noise(&mut data, gap, d, &noise, &mut rng);
            mask.extend(std::iter::repeat_n(false, gap));
        }
        let len = rng.random_range(cfg.salient_min..=cfg.salient_max);
        let template = cfg.template(k, len);
        data.extend(template.data().iter().map(|v| v + jitter.sample(&mut rng)));
        mask.extend(std::iter::repeat_n(true, len));
    }
    let trail = rng.random_range(cfg.pad_min..=cfg.pad_max);
    push_noise(&mut data, trail, d, &noise, &mut rng);
    mask.extend(std::iter::repeat_n(false, trail));

    let t_len = mask.len();
    let label = if cfg.multilabel {
        let mut hot = vec![false; cfg.classes];
        for k in classes {
            hot[k] = true;
        }
        Label::Multi(hot)
    } else {
        Label::Class(classes[0])
    };
    Sequence {
        x: Matrix::from_vec(t_len, d, data).expect("finite samples"),
        label,
        mask: Some(mask),
    }
}

/// Builds the dataset described by `cfg`. Samples are independent, so they
/// are generated in parallel; the result does not depend on the worker count.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    generate_with(cfg, Execution::default())
}

pub fn generate_with(cfg: &GenConfig, exec: Execution) -> Result<Dataset> {
    cfg.validate()?;
    let indices: Vec<usize> = (0..cfg.total()).collect();
    let sequences = exec.map(&indices, |_, &i| generate_sample(cfg, i));
    let splits = indices.iter().map(|&i| cfg.split_of(i)).collect();
    Ok(Dataset {
        input_dim: cfg.dim,
        classes: cfg.classes,
        mode: if cfg.multilabel {
            HeadMode::Multilabel
        } else {
            HeadMode::Multiclass
        },
        sequences,
        splits,
        provenance: Provenance {
            seed: Some(cfg.seed),
            config_hash: Some(cfg.config_hash()),
            generator: Some(cfg.clone()),
        },
    })
}
