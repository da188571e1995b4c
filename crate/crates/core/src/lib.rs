//! Actor-critic learning for linear-quadratic mean-field control.

pub mod cli;
pub mod config;
pub mod env;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod lq;
pub mod measure;
pub mod param;
pub mod rng;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
