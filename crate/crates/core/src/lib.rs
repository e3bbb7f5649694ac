//! Cube-regularized latent classifier.
//!
//! [`cube_algebra`] holds the exact integer algebra of 2×2×2 cubes and binary
//! quadratic forms. [`quad_reg`] is its differentiable real-valued
//! counterpart, used as a regularizer on a 3-dimensional latent space learned
//! by the network in [`model`].

pub mod checkpoint;
pub mod cube_algebra;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod quad_reg;
pub mod train;

pub use error::{Error, Result};
