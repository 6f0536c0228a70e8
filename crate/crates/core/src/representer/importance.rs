use serde::{Deserialize, Serialize};

use super::accumulator::l2_norm;
use crate::error::{Error, Result};
use crate::featstore::FeatureMap;

/// Per-patch global sample importance `α = (‖f‖ − τ) / C`.
///
/// Positive entries are excitatory for the foreground, negative ones inhibitory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub alpha: Vec<f64>,
    pub tau: f64,
    #[serde(rename = "constant_C")]
    pub constant_c: f64,
}

impl ImportanceMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.alpha[row * self.width + col]
    }
}

#[inline]
pub fn alpha(norm: f64, tau: f64, constant_c: f64) -> f64 {
    (norm - tau) / constant_c
}

pub fn importance_map(fm: &FeatureMap, tau: f64, constant_c: f64) -> Result<ImportanceMap> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::param(
            "tau",
            format!("must be finite and >= 0, got {tau}"),
        ));
    }
    if !(constant_c.is_finite() && constant_c > 0.0) {
        return Err(Error::param(
            "constant_C",
            format!("must be positive, got {constant_c}"),
        ));
    }
    let alpha = fm
        .patches()
        .map(|f| alpha(l2_norm(&f), tau, constant_c))
        .collect();
    Ok(ImportanceMap {
        image_id: fm.image_id.clone(),
        height: fm.height(),
        width: fm.width(),
        alpha,
        tau,
        constant_c,
    })
}
