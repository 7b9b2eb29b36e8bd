//! Geometric Attention networks for learning differential properties of
//! point-cloud patches.
//!
//! The crate bundles a small reverse-mode autodiff engine, the attention
//! and EdgeConv building blocks, DGCNN and Geometric Attention networks with
//! normal and sharp-feature heads, a procedural patch generator with
//! Poisson-disk sampling, and the training and evaluation loops.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod knn;
pub mod mlp;
pub mod network;
pub mod par;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
