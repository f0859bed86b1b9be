//! Continual-explanation laboratory.
//!
//! Trains small classifiers on class-incremental streams under Naive,
//! Experience Replay and GSS strategies, explains every candidate class with
//! SHAP after each experience, and measures how far those explanations drift
//! from a jointly trained reference.

pub mod data;
pub mod error;
pub mod explainers;
pub mod models;
pub mod numerics;
pub mod protocol;
pub mod rng;
pub mod runner;
pub mod strategies;

pub use error::{Error, Result};
pub use numerics::{Tape, Tensor, Var};
