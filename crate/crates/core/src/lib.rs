//! Sequential conditional GAN training with memory replay.

pub mod checks;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod scalar;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by experiments and on-disk formats.
pub type Real = f64;
pub type Tensor = numerics::Tensor<Real>;
pub type Graph = numerics::Graph<Real>;
pub type Params = models::ModelParams<Real>;
