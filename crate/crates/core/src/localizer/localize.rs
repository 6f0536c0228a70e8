use serde::{Deserialize, Serialize};

use super::activation::{activation_map, ActivationMap};
use super::components::{
    connected_components, largest_component, sorted_boxes, BoxPolicy, Connectivity,
};
use super::upsample::upsample_bilinear;
use crate::error::{Error, Result};
use crate::featstore::{BBox, FeatureMap};
use crate::representer::ForegroundPredictor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeParams {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub policy: BoxPolicy,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        LocalizeParams {
            threshold: DEFAULT_THRESHOLD,
            connectivity: Connectivity::Four,
            policy: BoxPolicy::Largest,
        }
    }
}

pub fn check_threshold(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::param(
            "threshold",
            format!("must lie in [0, 1], got {theta}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub image_id: String,
    pub threshold: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<ScoredBox>,
    pub chosen_box: Option<BBox>,
    pub degenerate: bool,
    /// Foreground mask at image resolution, row-major.
    #[serde(skip)]
    pub mask: Vec<bool>,
}

/// Normalized activations resampled to image pixels. Degenerate maps give zeros.
pub fn score_map(act: &ActivationMap, image_width: u32, image_height: u32) -> Result<Vec<f64>> {
    upsample_bilinear(
        &act.normalized,
        act.height,
        act.width,
        image_width as usize,
        image_height as usize,
    )
}

/// Thresholds an activation map at image resolution and extracts boxes.
pub fn localize_activation(
    act: &ActivationMap,
    image_width: u32,
    image_height: u32,
    params: &LocalizeParams,
) -> Result<LocalizationResult> {
    check_threshold(params.threshold)?;
    let (w, h) = (image_width as usize, image_height as usize);
    let mut result = LocalizationResult {
        image_id: act.image_id.clone(),
        threshold: params.threshold,
        image_width,
        image_height,
        boxes: Vec::new(),
        chosen_box: None,
        degenerate: act.degenerate,
        mask: vec![false; w * h],
    };
    if act.degenerate {
        return Ok(result);
    }
    let scores = score_map(act, image_width, image_height)?;
    result.mask = scores.iter().map(|&s| s >= params.threshold).collect();
    let comps = connected_components(&result.mask, w, h, params.connectivity);
    let Some(best) = largest_component(&comps) else {
        return Ok(result);
    };
    let chosen = comps[best].bbox;
    let boxes = match params.policy {
        BoxPolicy::Largest => vec![chosen],
        BoxPolicy::All => sorted_boxes(&comps),
    };
    result.boxes = boxes
        .into_iter()
        .map(|b| ScoredBox {
            bbox: b,
            area: b.area(),
        })
        .collect();
    result.chosen_box = Some(chosen);
    Ok(result)
}

pub fn localize(
    fm: &FeatureMap,
    predictor: &ForegroundPredictor,
    image_width: u32,
    image_height: u32,
    params: &LocalizeParams,
) -> Result<LocalizationResult> {
    check_threshold(params.threshold)?;
    let act = activation_map(fm, predictor)?;
    localize_activation(&act, image_width, image_height, params)
}
