//! Iterative pruning while training, with a knapsack-optimal importance
//! criterion (PINS), self-regularization against the latest best checkpoint,
//! and a CSR/int8 deployment path.
//!
//! Everything runs on a small reverse-mode autodiff engine over `f32`
//! tensors, so the toy models here can be trained, pruned, analyzed and
//! exported without external ML runtimes.

pub mod analysis;
pub mod autograd;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod models;
pub mod pruning;
pub mod selfreg;
pub mod sparse_export;
pub mod trainer;

pub use error::{PinsError, Result};
