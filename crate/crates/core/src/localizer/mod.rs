//! Activation maps, min-max normalization, upsampling and box extraction.

mod activation;
mod components;
pub mod export;
mod localize;
mod upsample;

pub use activation::{activation_map, minmax_normalize, ActivationMap};
pub use components::{
    boxes_from_mask, connected_components, largest_component, sorted_boxes, BoxPolicy, Component,
    Connectivity,
};
pub use localize::{
    check_threshold, localize, localize_activation, score_map, LocalizationResult, LocalizeParams,
    ScoredBox, DEFAULT_THRESHOLD,
};
pub use upsample::upsample_bilinear;
