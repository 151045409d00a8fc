//! Convex sparse coding.
//!
//! Dictionary learning posed as a convex problem over an unbounded set of
//! unit-norm basis vectors, regularized by `½‖W‖²₂,₁ + (γ/2)‖W‖²₁`, and solved
//! by boosting: each step asks an oracle for the basis vector whose weight row
//! is a subgradient of the regularizer's Fenchel conjugate, then re-optimizes
//! the weights. An alternating-optimization baseline and a patch-based image
//! denoiser built on both are included.

pub mod cli;
pub mod denoise;
pub mod error;
pub mod io;
pub mod linalg;
pub mod oracles;
pub mod regularizer;
pub mod solvers;

pub use error::{Error, Result};
pub use linalg::Matrix;
