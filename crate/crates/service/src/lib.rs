//! Read-only HTTP facade over a fitted predictor and its training features.
//!
//! All state is built once by [`ServiceState::build`] and never mutated, so
//! handlers share it through an `Arc` without locking.

mod http;
mod state;

pub use http::{router, serve, ApiError};
pub use state::{
    ImageInfo, LocalizeResponse, Meta, PredictorInfo, RepresenterResponse, ServiceConfig,
    ServiceState, DEFAULT_MAX_K,
};
