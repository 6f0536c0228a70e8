//! Threshold τ and the closed-form foreground predictor `w = (v − τ·u) / C`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::accumulator::{l2_norm, normalize_feature, Accumulator};
use crate::error::{Error, Result};
use crate::io::write_json_atomic;

pub const PREDICTOR_VERSION: u32 = 1;

/// τ = ‖v‖ / ‖u‖.
pub fn finalize_tau(acc: &Accumulator) -> Result<f64> {
    let u_norm = l2_norm(&acc.u());
    if acc.nonzero_patches() == 0 || u_norm == 0.0 {
        return Err(Error::DegenerateDataset(format!(
            "normalized feature sum is zero ({} patches, {} zero vectors)",
            acc.patch_count, acc.skipped_zero_vectors
        )));
    }
    Ok(l2_norm(&acc.v()) / u_norm)
}

/// τ from the ratio of full Gram sums, `sqrt(ΣΣ fᵢᵀfⱼ / ΣΣ f̂ᵢᵀf̂ⱼ)`.
///
/// Quadratic in the number of vectors; used to cross-check [`finalize_tau`].
pub fn tau_gram_oracle(features: &[Vec<f64>]) -> Result<f64> {
    let units: Vec<Option<Vec<f64>>> = features
        .iter()
        .map(|f| normalize_feature(f))
        .collect::<Result<_>>()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut raw = 0.0;
    let mut unit = 0.0;
    for i in 0..features.len() {
        for j in 0..features.len() {
            raw += dot(&features[i], &features[j]);
            if let (Some(a), Some(b)) = (&units[i], &units[j]) {
                unit += dot(a, b);
            }
        }
    }
    if unit <= 0.0 {
        return Err(Error::DegenerateDataset(
            "Gram sum of normalized features is zero".into(),
        ));
    }
    Ok((raw / unit).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauScope {
    /// τ from the statistics the predictor was fitted on.
    #[default]
    PerClass,
    /// τ from the union of all classes' statistics.
    Global,
    /// τ supplied by the caller.
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_digest: String,
    pub sample_rate: f64,
    pub seed: u64,
    pub image_count: u64,
    pub skipped_zero_vectors: u64,
    #[serde(default)]
    pub tau_scope: TauScope,
}

/// Sums the predictor was finalized from, kept so that τ can be re-chosen later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorStats {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub patch_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundPredictor {
    pub version: u32,
    pub dim: usize,
    pub w: Vec<f64>,
    pub tau: f64,
    #[serde(rename = "constant_C")]
    pub constant_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PredictorStats>,
}

fn combine(v: &[f64], u: &[f64], tau: f64, constant_c: f64) -> Vec<f64> {
    v.iter()
        .zip(u)
        .map(|(vi, ui)| (vi - tau * ui) / constant_c)
        .collect()
}

/// Builds `w = (v − τ·u) / C`. τ defaults to [`finalize_tau`]; an override
/// (including 0) replaces it.
pub fn finalize_predictor(
    acc: &Accumulator,
    constant_c: f64,
    tau_override: Option<f64>,
) -> Result<ForegroundPredictor> {
    if !(constant_c.is_finite() && constant_c > 0.0) {
        return Err(Error::param(
            "constant_C",
            format!("must be positive, got {constant_c}"),
        ));
    }
    let (tau, scope) = match tau_override {
        Some(t) if !(t.is_finite() && t >= 0.0) => {
            return Err(Error::param(
                "tau_override",
                format!("must be finite and >= 0, got {t}"),
            ))
        }
        Some(t) => (t, TauScope::Override),
        None => (finalize_tau(acc)?, TauScope::PerClass),
    };
    let v = acc.v();
    let u = acc.u();
    Ok(ForegroundPredictor {
        version: PREDICTOR_VERSION,
        dim: acc.dim(),
        w: combine(&v, &u, tau, constant_c),
        tau,
        constant_c,
        class_id: None,
        provenance: Provenance {
            manifest_digest: String::new(),
            sample_rate: 1.0,
            seed: 0,
            image_count: acc.image_count,
            skipped_zero_vectors: acc.skipped_zero_vectors,
            tau_scope: scope,
        },
        stats: Some(PredictorStats {
            v,
            u,
            patch_count: acc.patch_count,
        }),
    })
}

impl ForegroundPredictor {
    /// Re-finalizes at a different τ using the recorded sums.
    pub fn with_tau(&self, tau: f64) -> Result<ForegroundPredictor> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::param(
                "tau",
                format!("must be finite and >= 0, got {tau}"),
            ));
        }
        let stats = self.stats.as_ref().ok_or_else(|| {
            Error::param("tau", "predictor file carries no stats; refit to sweep τ")
        })?;
        let mut out = self.clone();
        out.w = combine(&stats.v, &stats.u, tau, self.constant_c);
        out.tau = tau;
        out.provenance.tau_scope = TauScope::Override;
        Ok(out)
    }

    /// `wᵀ f̂` for one unit vector.
    pub fn score_unit(&self, unit: &[f64]) -> f64 {
        self.w.iter().zip(unit).map(|(a, b)| a * b).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PREDICTOR_VERSION {
            return Err(Error::param(
                "version",
                format!("predictor version {} unsupported", self.version),
            ));
        }
        if self.w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: self.w.len(),
            });
        }
        if self.w.iter().any(|x| !x.is_finite()) || !self.tau.is_finite() {
            return Err(Error::NonFinite("predictor"));
        }
        if self.constant_c.is_nan() || self.constant_c <= 0.0 {
            return Err(Error::param("constant_C", "must be positive"));
        }
        if let Some(s) = &self.stats {
            if s.v.len() != self.dim || s.u.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: s.v.len().max(s.u.len()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PredictorFile {
    One(ForegroundPredictor),
    Many(Vec<ForegroundPredictor>),
}

/// Writes one predictor as a JSON object, several as a JSON array.
pub fn save_predictors(path: &Path, predictors: &[ForegroundPredictor]) -> Result<()> {
    if let [one] = predictors {
        write_json_atomic(path, one)
    } else {
        write_json_atomic(path, predictors)
    }
}

pub fn load_predictors(path: &Path) -> Result<Vec<ForegroundPredictor>> {
    let file: PredictorFile = crate::io::read_json(path)?;
    let list = match file {
        PredictorFile::One(p) => vec![p],
        PredictorFile::Many(v) => v,
    };
    if list.is_empty() {
        return Err(Error::param(
            "predictor",
            format!("{} holds no predictors", path.display()),
        ));
    }
    for p in &list {
        p.validate()?;
    }
    Ok(list)
}

/// Picks the class-agnostic predictor if present, else the one for `class_id`.
pub fn select_predictor(
    predictors: &[ForegroundPredictor],
    class_id: Option<u32>,
) -> Result<&ForegroundPredictor> {
    if let Some(p) = predictors.iter().find(|p| p.class_id.is_none()) {
        return Ok(p);
    }
    predictors
        .iter()
        .find(|p| class_id.is_some() && p.class_id == class_id)
        .ok_or(Error::NoPredictor(class_id))
}
