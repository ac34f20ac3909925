//! Estimation of causal effects of personalized-medicine treatment
//! algorithms when treatment comes in multiple versions.

pub mod error;
pub mod estimators;
pub mod forest;
pub mod glm;
pub mod io;
pub mod model;
pub mod pdx;
pub mod simulation;
pub mod study;

pub use error::{Error, Result};
