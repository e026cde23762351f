//! Low-dimensional trajectory subspaces for neural-network training.
//!
//! Baseline SGD training is sampled into a parameter trajectory, the
//! trajectory is reduced to an orthonormal basis through its `t x t` Gram
//! matrix, and the network is then retrained from its initial point inside
//! that basis with projected SGD or a projected BFGS method.
//!
//! Module map:
//!
//! - [`nn`]: dense tensors, a reverse-mode tape and small feed-forward models.
//! - [`data`]: IDX loading, synthetic blobs, batching and label corruption.
//! - [`trajectory`]: sampling schedule and the on-disk snapshot store.
//! - [`subspace`]: Gram-matrix basis extraction, projection and lifting.
//! - [`optim`]: SGD, projected SGD, projected BFGS and Adam.
//! - [`runner`]: experiment configuration, commands and CSV metrics.

pub mod data;
mod error;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod runner;
pub mod subspace;
pub mod tensor;
pub mod trajectory;

mod binio;

pub use error::{Error, Result};
pub use nn::{GradVector, ModelSpec, ParamVector};
pub use subspace::SubspaceBasis;
pub use tensor::Tensor;
