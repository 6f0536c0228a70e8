//! Box-level localization metrics.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::BBox;
use crate::localizer::{connected_components, Connectivity};

/// Intersection over union with half-open integer areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Best IoU of `pred` against any ground-truth box; a missing prediction scores 0.
pub fn best_iou(pred: Option<&BBox>, gts: &[BBox]) -> f64 {
    match pred {
        None => 0.0,
        Some(p) => gts.iter().map(|g| iou(p, g)).fold(0.0, f64::max),
    }
}

/// One image's predicted box with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSample {
    pub image_id: String,
    pub predicted: Option<BBox>,
    pub gt_boxes: Vec<BBox>,
    pub class_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    pub best_iou: f64,
    pub loc_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_hit: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocScore {
    pub ratio: f64,
    pub per_image: Vec<ImageScore>,
}

/// Pairs predictions with ground truth by image id; both sides must cover the
/// same ids.
pub fn join_results(
    predicted: &[(String, Option<BBox>)],
    gts: &BTreeMap<String, Vec<BBox>>,
) -> Result<Vec<BoxSample>> {
    if predicted.len() != gts.len() {
        return Err(Error::param(
            "results",
            format!(
                "{} results for {} ground-truth images",
                predicted.len(),
                gts.len()
            ),
        ));
    }
    predicted
        .iter()
        .map(|(id, b)| {
            let gt = gts.get(id).ok_or_else(|| {
                Error::param("results", format!("result for {id:?} has no ground truth"))
            })?;
            Ok(BoxSample {
                image_id: id.clone(),
                predicted: *b,
                gt_boxes: gt.clone(),
                class_id: None,
            })
        })
        .collect()
}

fn check_gts(samples: &[BoxSample], metric: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::param("samples", "no images to evaluate"));
    }
    if let Some(s) = samples.iter().find(|s| s.gt_boxes.is_empty()) {
        return Err(Error::MissingGroundTruth {
            kind: "gt_boxes",
            metric: metric.to_string(),
            image_id: s.image_id.clone(),
        });
    }
    Ok(())
}

/// Fraction of images whose predicted box has IoU strictly above `delta` with some GT box.
pub fn gt_known_loc(samples: &[BoxSample], delta: f64) -> Result<LocScore> {
    check_gts(samples, "gtknown")?;
    let per_image: Vec<ImageScore> = samples
        .iter()
        .map(|s| {
            let best = best_iou(s.predicted.as_ref(), &s.gt_boxes);
            ImageScore {
                image_id: s.image_id.clone(),
                best_iou: best,
                loc_hit: best > delta,
                class_hit: None,
            }
        })
        .collect();
    let hits = per_image.iter().filter(|s| s.loc_hit).count();
    Ok(LocScore {
        ratio: hits as f64 / samples.len() as f64,
        per_image,
    })
}

/// Ranked class predictions per image, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassPredictions(pub BTreeMap<String, Vec<u32>>);

impl ClassPredictions {
    pub fn validate(&self) -> Result<()> {
        for (id, ranked) in &self.0 {
            if ranked.is_empty() {
                return Err(Error::param(
                    "predictions",
                    format!("{id:?} has no predictions"),
                ));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = ranked.iter().find(|c| !seen.insert(**c)) {
                return Err(Error::param(
                    "predictions",
                    format!("{id:?} lists class {dup} twice"),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: ClassPredictions = crate::io::read_json(path)?;
        p.validate()?;
        Ok(p)
    }
}

/// Localization hit AND true class within the top `k` predictions.
pub fn top_k_loc(
    samples: &[BoxSample],
    predictions: &ClassPredictions,
    k: usize,
    delta: f64,
) -> Result<LocScore> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let mut base = gt_known_loc(samples, delta)?;
    for (s, score) in samples.iter().zip(base.per_image.iter_mut()) {
        let ranked = predictions.0.get(&s.image_id).ok_or_else(|| {
            Error::param(
                "predictions",
                format!("no class prediction for {:?}", s.image_id),
            )
        })?;
        if ranked.len() < k {
            return Err(Error::param(
                "predictions",
                format!(
                    "{:?} has {} predictions, top-{k} needs {k}",
                    s.image_id,
                    ranked.len()
                ),
            ));
        }
        let truth = s.class_id.ok_or_else(|| Error::MissingGroundTruth {
            kind: "class_id",
            metric: format!("top{k}"),
            image_id: s.image_id.clone(),
        })?;
        score.class_hit = Some(ranked[..k].contains(&truth));
    }
    let hits = base
        .per_image
        .iter()
        .filter(|s| s.loc_hit && s.class_hit == Some(true))
        .count();
    base.ratio = hits as f64 / samples.len() as f64;
    Ok(base)
}

/// Image-resolution score map with its ground-truth boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapSample {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
    pub gt_boxes: Vec<BBox>,
}

pub const MAXBOXACC_DELTAS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAccuracy {
    pub delta: f64,
    pub accuracy: f64,
    /// First grid threshold attaining `accuracy`.
    pub best_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxBoxAccReport {
    pub value: f64,
    pub per_delta: Vec<DeltaAccuracy>,
}

/// Best IoU over every connected-component box at each grid threshold.
/// Returns one row per image, one column per threshold.
pub fn best_iou_table(
    samples: &[ScoreMapSample],
    theta_grid: &[f64],
    connectivity: Connectivity,
) -> Vec<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            theta_grid
                .iter()
                .map(|&theta| {
                    let mask: Vec<bool> = s.scores.iter().map(|&v| v >= theta).collect();
                    connected_components(&mask, s.width, s.height, connectivity)
                        .iter()
                        .map(|c| best_iou(Some(&c.bbox), &s.gt_boxes))
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect()
}

/// Mean over `deltas` of the threshold-maximized box accuracy.
pub fn max_box_acc_v2(
    samples: &[ScoreMapSample],
    theta_grid: &[f64],
    deltas: &[f64],
    connectivity: Connectivity,
) -> Result<MaxBoxAccReport> {
    if theta_grid.is_empty() {
        return Err(Error::param("theta_grid", "empty grid"));
    }
    if theta_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("theta_grid", "must be ascending"));
    }
    if deltas.is_empty() {
        return Err(Error::param("deltas", "empty IoU threshold set"));
    }
    let as_box_samples: Vec<BoxSample> = samples
        .iter()
        .map(|s| BoxSample {
            image_id: s.image_id.clone(),
            predicted: None,
            gt_boxes: s.gt_boxes.clone(),
            class_id: None,
        })
        .collect();
    check_gts(&as_box_samples, "maxboxaccv2")?;
    for s in samples {
        if s.scores.len() != s.width * s.height {
            return Err(Error::param(
                "scores",
                format!("{:?}: size mismatch", s.image_id),
            ));
        }
    }
    let table = best_iou_table(samples, theta_grid, connectivity);
    let n = samples.len() as f64;
    let per_delta: Vec<DeltaAccuracy> = deltas
        .iter()
        .map(|&delta| {
            let mut best = (f64::NEG_INFINITY, theta_grid[0]);
            for (t, &theta) in theta_grid.iter().enumerate() {
                let hits = table.iter().filter(|row| row[t] > delta).count();
                let acc = hits as f64 / n;
                if acc > best.0 {
                    best = (acc, theta);
                }
            }
            DeltaAccuracy {
                delta,
                accuracy: best.0,
                best_theta: best.1,
            }
        })
        .collect();
    let value = per_delta.iter().map(|d| d.accuracy).sum::<f64>() / per_delta.len() as f64;
    Ok(MaxBoxAccReport { value, per_delta })
}
