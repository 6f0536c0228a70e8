//! Pixel-level metrics over score maps pooled across the whole dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One image's score map and binary ground-truth mask, same size.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub image_id: String,
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

fn check(samples: &[PixelSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::param("samples", "no images to evaluate"));
    }
    for s in samples {
        if s.scores.len() != s.mask.len() {
            return Err(Error::param(
                "scores",
                format!(
                    "{:?}: {} scores for {} mask pixels",
                    s.image_id,
                    s.scores.len(),
                    s.mask.len()
                ),
            ));
        }
        if s.scores.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
    }
    Ok(())
}

/// Area under the pooled pixel precision-recall curve (rectangle rule over
/// distinct score thresholds, highest first).
pub fn pxap(samples: &[PixelSample]) -> Result<f64> {
    check(samples)?;
    let mut pixels: Vec<(f64, bool)> = samples
        .iter()
        .flat_map(|s| s.scores.iter().copied().zip(s.mask.iter().copied()))
        .collect();
    let positives = pixels.iter().filter(|p| p.1).count();
    if positives == 0 {
        return Err(Error::DegenerateDataset(
            "no positive ground-truth pixel in the dataset".into(),
        ));
    }
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total_pos = positives as f64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < pixels.len() {
        let score = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == score {
            if pixels[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiouAggregation {
    /// TP/(TP+FP+FN) with counts pooled over all pixels of all images.
    #[default]
    Global,
    /// Mean of per-image IoUs (an image with empty prediction and GT scores 1).
    PerImageMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiouReport {
    pub aggregation: PiouAggregation,
    pub value: f64,
    pub best_theta: f64,
    /// IoU at each grid threshold under `aggregation`.
    pub per_theta: Vec<f64>,
    /// Best value under the other aggregation rule.
    pub alternative: f64,
    pub alternative_best_theta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Confusion {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Confusion {
    fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

fn confusion(s: &PixelSample, theta: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&score, &gt) in s.scores.iter().zip(&s.mask) {
        match (score >= theta, gt) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

fn argmax_first(values: &[f64], grid: &[f64]) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for (&v, &t) in values.iter().zip(grid) {
        if v > best.0 {
            best = (v, t);
        }
    }
    best
}

/// Peak IoU over a threshold grid.
pub fn piou(
    samples: &[PixelSample],
    theta_grid: &[f64],
    aggregation: PiouAggregation,
) -> Result<PiouReport> {
    check(samples)?;
    if theta_grid.is_empty() {
        return Err(Error::param("theta_grid", "empty grid"));
    }
    let mut global = Vec::with_capacity(theta_grid.len());
    let mut per_image = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let mut pooled = Confusion::default();
        let mut sum = 0.0;
        for s in samples {
            let c = confusion(s, theta);
            pooled.tp += c.tp;
            pooled.fp += c.fp;
            pooled.fn_ += c.fn_;
            sum += c.iou();
        }
        global.push(pooled.iou());
        per_image.push(sum / samples.len() as f64);
    }
    let (main, other) = match aggregation {
        PiouAggregation::Global => (global, per_image),
        PiouAggregation::PerImageMean => (per_image, global),
    };
    let (value, best_theta) = argmax_first(&main, theta_grid);
    let (alternative, alternative_best_theta) = argmax_first(&other, theta_grid);
    Ok(PiouReport {
        aggregation,
        value,
        best_theta,
        per_theta: main,
        alternative,
        alternative_best_theta,
    })
}
