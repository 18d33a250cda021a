//! Temporal attention-gated recurrent model for classifying noisy sequences.
//!
//! A bidirectional attention module scores every timestep with a salience
//! `a_t ∈ [0, 1]`; a gated recurrent cell then mixes each observation into its
//! hidden state in proportion to that score. Everything is written directly
//! on `f64` buffers with hand-derived backpropagation through time.

pub mod attention;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod exec;
pub mod gated_unit;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod params;
pub mod salience;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Result, TagmError};
