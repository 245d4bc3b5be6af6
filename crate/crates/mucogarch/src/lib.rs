//! Multivariate COGARCH(1,1): simulation, closed-form moments, identification
//! and GMM estimation.

pub mod diagnostics;
pub mod error;
pub mod gmm;
pub mod io;
pub mod levy_model;
pub mod moments;
pub mod optim;
pub mod recover;
pub mod sample_stats;
pub mod simulate;
pub mod study;
pub mod tensor_ops;

pub use error::{Error, Result};
