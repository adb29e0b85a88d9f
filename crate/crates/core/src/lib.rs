//! Safe-by-construction control with constraint-affine projection layers.
//!
//! The crate is organized by subsystem:
//!
//! - [`affine`]: constraint decomposition, pseudoinverse projection candidates and output selection.
//! - [`cbf`]: halfspace and smooth-union barriers, Lie derivatives, constraint assembly.
//! - [`nn`]: ReLU networks with manual backpropagation, Adam, losses and training.
//! - [`qp`]: a dense dual active-set QP solver and the CBF-QP / optimal-decay filters.
//! - [`sim`]: scenarios, closed-loop rollouts, state sampling and metrics.
//! - [`experiment`]: the method sweep that produces the benchmark table.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod cbf;
pub mod nn;
pub mod qp;
pub mod sim;
pub mod experiment;

pub use affine::{AffineConstraintSet, AffineError, Decomposition, SelectorConfig, SubsetIndex};
