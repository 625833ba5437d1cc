//! Intrinsic multinomial logistic regression on SPD manifolds under pullback
//! Euclidean metrics, with the SPDNet layers and Riemannian optimizers needed
//! to train it.

pub mod classifier;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod random;

pub use error::{Error, Result};
