//! Unique-feature memorisation auditing for image classifiers.

pub mod analysis;
pub mod canary;
pub mod config;
pub mod data;
pub mod error;
pub mod influence;
pub mod nn;
pub mod plot;
pub mod report;
pub mod score;
pub mod stats;
pub mod trainer;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
