//! Dataset-level evaluation: runs the localizer over the test split and
//! dispatches to a metric. Per-image work runs in parallel; reductions happen
//! in manifest order so reports are bit-reproducible.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boxes::{
    gt_known_loc, max_box_acc_v2, top_k_loc, BoxSample, ClassPredictions, DeltaAccuracy,
    ImageScore, ScoreMapSample, MAXBOXACC_DELTAS,
};
use super::pixels::{piou, pxap, PiouAggregation, PixelSample};
use crate::error::{Error, Result};
use crate::featstore::{read_pgm, DatasetManifest, ManifestEntry, Split};
use crate::localizer::{
    activation_map, localize_activation, score_map, ActivationMap, LocalizeParams,
};
use crate::representer::{select_predictor, ForegroundPredictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    GtKnown,
    Top1,
    Top5,
    Pxap,
    Piou,
    MaxBoxAccV2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::GtKnown => "gtknown",
            Metric::Top1 => "top1",
            Metric::Top5 => "top5",
            Metric::Pxap => "pxap",
            Metric::Piou => "piou",
            Metric::MaxBoxAccV2 => "maxboxaccv2",
        }
    }

    fn needs_masks(self) -> bool {
        matches!(self, Metric::Pxap | Metric::Piou)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "gtknown" => Metric::GtKnown,
            "top1" => Metric::Top1,
            "top5" => Metric::Top5,
            "pxap" => Metric::Pxap,
            "piou" => Metric::Piou,
            "maxboxaccv2" => Metric::MaxBoxAccV2,
            other => {
                return Err(format!(
                    "unknown metric {other:?} (expected gtknown|top1|top5|pxap|piou|maxboxaccv2)"
                ))
            }
        })
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive, written `lo:hi:n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl LinearGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::param(
                "grid",
                format!("need finite lo <= hi and n >= 1, got {lo}:{hi}:{n}"),
            ));
        }
        Ok(LinearGrid { lo, hi, n })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i + 1 == self.n {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

impl Default for LinearGrid {
    fn default() -> Self {
        LinearGrid {
            lo: 0.0,
            hi: 1.0,
            n: 101,
        }
    }
}

impl FromStr for LinearGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected lo:hi:n, got {s:?}"));
        };
        let lo: f64 = lo.parse().map_err(|_| format!("bad lo in {s:?}"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad hi in {s:?}"))?;
        let n: usize = n.parse().map_err(|_| format!("bad n in {s:?}"))?;
        LinearGrid::new(lo, hi, n).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// IoU threshold for GT-Known and Top-k.
    pub delta: f64,
    pub theta_grid: LinearGrid,
    pub localize: LocalizeParams,
    pub maxbox_deltas: Vec<f64>,
    pub piou_aggregation: PiouAggregation,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            delta: 0.5,
            theta_grid: LinearGrid::default(),
            localize: LocalizeParams::default(),
            maxbox_deltas: MAXBOXACC_DELTAS.to_vec(),
            piou_aggregation: PiouAggregation::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSweep {
    pub grid: LinearGrid,
    pub points: Vec<TauPoint>,
    pub best_tau: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub dataset_digest: String,
    pub predictor_digests: Vec<String>,
    pub parameters: EvalParams,
    pub image_count: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_delta: Option<Vec<DeltaAccuracy>>,
    /// PIoU under the non-default aggregation rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_image: Vec<ImageScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_sweep: Option<TauSweep>,
}

impl EvalReport {
    /// Per-image table as CSV.
    pub fn write_per_image_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(["image_id", "best_iou", "loc_hit", "class_hit"])
            .map_err(csv_err)?;
        for r in &self.per_image {
            let class_hit = r.class_hit.map(|c| c.to_string()).unwrap_or_default();
            w.write_record([
                r.image_id.as_str(),
                &r.best_iou.to_string(),
                &r.loc_hit.to_string(),
                &class_hit,
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        crate::io::write_atomic(path, &bytes)
    }
}

fn predictor_digest(p: &ForegroundPredictor) -> String {
    let bytes = serde_json::to_vec(p).expect("predictor serializes");
    crate::featstore::sha256_hex(&bytes)
}

/// Checks that every test entry has the ground truth `metric` needs.
fn check_ground_truth(entries: &[&ManifestEntry], metric: Metric) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::param("manifest", "no test entries to evaluate"));
    }
    for e in entries {
        let missing = if metric.needs_masks() {
            e.gt_mask_path.is_none().then_some("gt_mask_path")
        } else if e.gt_boxes.as_ref().is_none_or(|b| b.is_empty()) {
            Some("gt_boxes")
        } else if matches!(metric, Metric::Top1 | Metric::Top5) && e.class_id.is_none() {
            Some("class_id")
        } else {
            None
        };
        if let Some(kind) = missing {
            return Err(Error::MissingGroundTruth {
                kind,
                metric: metric.name().to_string(),
                image_id: e.image_id.clone(),
            });
        }
    }
    Ok(())
}

fn activation_for(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    predictors: &[ForegroundPredictor],
) -> Result<ActivationMap> {
    let predictor = select_predictor(predictors, entry.class_id)?;
    let fm = manifest.load_feature_map(entry)?;
    activation_map(&fm, predictor)
}

fn load_mask(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Vec<bool>> {
    let path = manifest
        .mask_path(entry)
        .expect("checked by check_ground_truth");
    let img = read_pgm(&path)?;
    if img.width != entry.image_width as usize || img.height != entry.image_height as usize {
        return Err(Error::Pgm {
            path,
            reason: format!(
                "mask is {}x{}, image is {}x{}",
                img.width, img.height, entry.image_width, entry.image_height
            ),
        });
    }
    Ok(img.to_mask())
}

/// Evaluates `predictors` on the manifest's test split.
///
/// A class-agnostic predictor (no `class_id`) is used for every image when
/// present; otherwise each image uses the predictor of its own class.
pub fn evaluate(
    manifest: &DatasetManifest,
    predictors: &[ForegroundPredictor],
    metric: Metric,
    params: &EvalParams,
    predictions: Option<&ClassPredictions>,
) -> Result<EvalReport> {
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    check_ground_truth(&entries, metric)?;
    if matches!(metric, Metric::Top1 | Metric::Top5) && predictions.is_none() {
        return Err(Error::param(
            "predictions",
            format!("{metric} requires a class prediction file"),
        ));
    }
    let theta_grid = params.theta_grid.values();

    let mut report = EvalReport {
        metric,
        dataset_digest: manifest.digest.clone(),
        predictor_digests: predictors.iter().map(predictor_digest).collect(),
        parameters: params.clone(),
        image_count: entries.len(),
        value: 0.0,
        best_theta: None,
        per_delta: None,
        alternative: None,
        per_image: Vec::new(),
        tau_sweep: None,
    };

    match metric {
        Metric::GtKnown | Metric::Top1 | Metric::Top5 => {
            let samples = entries
                .par_iter()
                .map(|e| {
                    let act = activation_for(manifest, e, predictors)?;
                    let loc =
                        localize_activation(&act, e.image_width, e.image_height, &params.localize)?;
                    Ok(BoxSample {
                        image_id: e.image_id.clone(),
                        predicted: loc.chosen_box,
                        gt_boxes: e.gt_boxes.clone().unwrap_or_default(),
                        class_id: e.class_id,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let score = match metric {
                Metric::GtKnown => gt_known_loc(&samples, params.delta)?,
                Metric::Top1 => {
                    top_k_loc(&samples, predictions.expect("checked"), 1, params.delta)?
                }
                _ => top_k_loc(&samples, predictions.expect("checked"), 5, params.delta)?,
            };
            report.value = score.ratio;
            report.per_image = score.per_image;
        }
        Metric::MaxBoxAccV2 => {
            let samples = entries
                .par_iter()
                .map(|e| {
                    let act = activation_for(manifest, e, predictors)?;
                    Ok(ScoreMapSample {
                        image_id: e.image_id.clone(),
                        width: e.image_width as usize,
                        height: e.image_height as usize,
                        scores: score_map(&act, e.image_width, e.image_height)?,
                        gt_boxes: e.gt_boxes.clone().unwrap_or_default(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let r = max_box_acc_v2(
                &samples,
                &theta_grid,
                &params.maxbox_deltas,
                params.localize.connectivity,
            )?;
            report.value = r.value;
            report.per_delta = Some(r.per_delta);
        }
        Metric::Pxap | Metric::Piou => {
            let samples = entries
                .par_iter()
                .map(|e| {
                    let act = activation_for(manifest, e, predictors)?;
                    Ok(PixelSample {
                        image_id: e.image_id.clone(),
                        scores: score_map(&act, e.image_width, e.image_height)?,
                        mask: load_mask(manifest, e)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if metric == Metric::Pxap {
                report.value = pxap(&samples)?;
            } else {
                let r = piou(&samples, &theta_grid, params.piou_aggregation)?;
                report.value = r.value;
                report.best_theta = Some(r.best_theta);
                report.alternative = Some(r.alternative);
            }
        }
    }
    Ok(report)
}

/// Re-finalizes every predictor at each τ in `grid` and evaluates `metric`.
/// The returned report carries the metric at the predictors' own τ plus the sweep.
pub fn evaluate_tau_sweep(
    manifest: &DatasetManifest,
    predictors: &[ForegroundPredictor],
    metric: Metric,
    params: &EvalParams,
    predictions: Option<&ClassPredictions>,
    grid: LinearGrid,
) -> Result<EvalReport> {
    let mut report = evaluate(manifest, predictors, metric, params, predictions)?;
    let mut points = Vec::with_capacity(grid.n);
    for tau in grid.values() {
        let swept = predictors
            .iter()
            .map(|p| p.with_tau(tau))
            .collect::<Result<Vec<_>>>()?;
        let r = evaluate(manifest, &swept, metric, params, predictions)?;
        points.push(TauPoint {
            tau,
            value: r.value,
        });
    }
    let best = points
        .iter()
        .fold(None::<&TauPoint>, |best, p| match best {
            Some(b) if b.value >= p.value => Some(b),
            _ => Some(p),
        })
        .expect("grid has at least one point");
    report.tau_sweep = Some(TauSweep {
        grid,
        best_tau: best.tau,
        best_value: best.value,
        points,
    });
    Ok(report)
}
