//! Content-conditioned logistic factorization of purchase data.

pub mod artifact;
pub mod catalog;
pub mod error;
pub mod evaluation;
pub mod kmeans;
pub mod network;
pub mod pipeline;
pub mod purchases;
pub mod rng;
pub mod similarity;
pub mod sparse;
pub mod synthetic;
pub mod training;
pub mod tsne;

pub use error::{Error, Result};
