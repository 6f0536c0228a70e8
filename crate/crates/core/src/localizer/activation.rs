use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::FeatureMap;
use crate::representer::{l2_norm, ForegroundPredictor};

/// Foreground scores of one test image at feature resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    /// `wᵀ f̂` per patch, row-major. Zero-norm patches score 0.
    pub raw: Vec<f64>,
    /// Min-max normalized `raw`; all zeros when degenerate.
    pub normalized: Vec<f64>,
    /// The raw map is constant.
    pub degenerate: bool,
}

/// Maps values affinely onto [0, 1]. A constant input yields zeros and `true`.
pub fn minmax_normalize(values: &[f64]) -> Result<(Vec<f64>, bool)> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("score grid"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if values.is_empty() || hi == lo {
        return Ok((vec![0.0; values.len()], true));
    }
    let span = hi - lo;
    Ok((values.iter().map(|x| (x - lo) / span).collect(), false))
}

pub fn activation_map(fm: &FeatureMap, predictor: &ForegroundPredictor) -> Result<ActivationMap> {
    if fm.channels() != predictor.dim {
        return Err(Error::DimensionMismatch {
            expected: predictor.dim,
            found: fm.channels(),
        });
    }
    let mut buf = vec![0.0; fm.channels()];
    let raw: Vec<f64> = (0..fm.patch_count())
        .map(|p| {
            fm.patch_into(p, &mut buf);
            let n = l2_norm(&buf);
            if n == 0.0 {
                0.0
            } else {
                predictor.w.iter().zip(&buf).map(|(w, x)| w * (x / n)).sum()
            }
        })
        .collect();
    let (normalized, degenerate) = minmax_normalize(&raw)?;
    Ok(ActivationMap {
        image_id: fm.image_id.clone(),
        height: fm.height(),
        width: fm.width(),
        raw,
        normalized,
        degenerate,
    })
}
