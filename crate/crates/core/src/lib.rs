//! Evidential deep learning with density-informed pseudo-counts.

pub mod config;
pub mod conjugate;
pub mod data;
pub mod density;
pub mod dip;
pub mod dirichlet;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod objective;
pub mod pipeline;
pub mod special;
pub mod verify;

pub use dirichlet::{ConcentrationVector, ProbabilityVector, RandomSeed};
pub use error::{Error, Result};
