//! Object localization by representer point selection over pre-extracted
//! dense feature maps.
//!
//! A foreground predictor `w = (v − τ·u) / C` is fitted in one streaming pass
//! from the sums of raw (`v`) and unit-normalized (`u`) training features, with
//! `τ = ‖v‖/‖u‖`. A test patch's foreground score is `wᵀ f̂`, which decomposes
//! exactly into per-training-patch representer values `α·(f̂ₙᵀ f̂)` with
//! `α = (‖fₙ‖ − τ) / C`.
//!
//! - [`featstore`] – RPSF feature files, manifests, PGM masks.
//! - [`representer`] – accumulation, τ, predictor fit, importance, representer queries.
//! - [`localizer`] – activation maps, normalization, upsampling, boxes.
//! - [`evalkit`] – IoU, GT-Known, Top-k Loc, MaxBoxAccV2, PxAP, PIoU.
//! - [`synth`] – synthetic datasets with planted foreground boxes.

pub mod error;
pub mod evalkit;
pub mod featstore;
pub mod io;
pub mod localizer;
pub mod representer;
pub mod synth;

pub use error::{Error, Result};
