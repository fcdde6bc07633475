//! Convolutional neural networks with symmetry-constrained kernels.
//!
//! Conv filters can be restricted to one of three linear-phase families —
//! full dihedral symmetry (T1), point reflection (T2A), anti point
//! reflection (T2B) — or left unconstrained (R). Tied weights are stored
//! once in canonical form; expansion builds the full filter and
//! backpropagated gradients are folded back onto the canonical vector, so
//! the symmetry holds exactly at every step of training.
//!
//! The crate bundles the kernel machinery, a small from-scratch CNN
//! (two conv layers, two dense layers), dataset loading/preprocessing for
//! IDX-format digit data, frequency-response checks for the linear-phase
//! property, and an experiment harness with a rank-sum significance test.

pub mod cli;
pub mod conv;
pub mod data;
pub mod error;
pub mod fir;
pub mod harness;
pub mod matrix;
pub mod network;
pub mod stats;
pub mod symmetry;

pub use error::{Error, Result};
pub use matrix::Matrix;
