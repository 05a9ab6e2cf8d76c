//! Desk-scale testbed for variable-rate learned compression.
//!
//! The crate is organized bottom-up: `gradcore` is a small reverse-mode
//! autodiff engine over dense f64 tensors, `quant` holds the quantization
//! schemes and the centroid offset oracle, `entropy` the probability models
//! and the range coder, `moo` the multi-objective descent machinery, `models`
//! the toy codec families built on top of all of that, and `harness` the
//! training protocols and sweeps driven by the CLI.

pub mod entropy;
pub mod error;
pub mod gradcore;
pub mod moo;
pub mod quant;

pub use error::{Error, Result};
