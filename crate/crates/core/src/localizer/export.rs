//! Map exports for inspection and downstream tools.

use crate::error::Result;
use crate::featstore::{BBox, FeatureMap, GrayImage};

use super::ActivationMap;

/// Scales [0, 1] scores to 0–255.
pub fn scores_to_gray(values: &[f64], width: usize, height: usize) -> GrayImage {
    GrayImage {
        width,
        height,
        pixels: values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    }
}

/// Draws a one-pixel white outline with a black inner line for contrast.
pub fn draw_box(img: &mut GrayImage, b: &BBox) {
    let (x0, y0) = (b.x0 as usize, b.y0 as usize);
    let (x1, y1) = (b.x1 as usize - 1, b.y1 as usize - 1);
    let mut ring = |inset: usize, value: u8| {
        if x0 + inset > x1.saturating_sub(inset) || y0 + inset > y1.saturating_sub(inset) {
            return;
        }
        let (l, r, t, bt) = (x0 + inset, x1 - inset, y0 + inset, y1 - inset);
        for x in l..=r {
            img.set(x, t, value);
            img.set(x, bt, value);
        }
        for y in t..=bt {
            img.set(l, y, value);
            img.set(r, y, value);
        }
    };
    ring(0, 255);
    ring(1, 0);
}

/// Raw activations as a single-channel RPSF map (f32).
pub fn raw_as_feature_map(act: &ActivationMap) -> Result<FeatureMap> {
    FeatureMap::new(
        act.image_id.clone(),
        1,
        act.height,
        act.width,
        act.raw.iter().map(|&x| x as f32).collect(),
    )
}
