//! Minimal reverse-mode autodiff over dense f64 tensors.
//!
//! The op set is deliberately small: pointwise arithmetic and nonlinearities,
//! 2-D matmul/affine, reductions, and the shape plumbing (concat, slice,
//! broadcast, reshape) needed to express the codec transforms, quantization
//! proxies, and rate/distortion losses. No convolutions; the toy models here
//! are all vector/patch sized.

pub mod checkpoint;
pub mod finitediff;
mod graph;
pub mod num;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::{broadcast_shapes, numel_of, reduce_to_shape, Tensor};
