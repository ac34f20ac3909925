//! Client for the pmcausal HTTP service, plus the request and response
//! types both sides share.

pub mod api;
#[cfg(feature = "http")]
mod http;

#[cfg(feature = "http")]
pub use http::{Client, ClientError};
