//! Representer-point retrieval: which training patches drive a test patch's score.
//!
//! Each training patch contributes `α·(f̂ₙᵀ f̂ₜ)`; summed over the whole training
//! set these contributions reproduce the activation `wᵀ f̂ₜ` exactly (up to
//! rounding), so the ranked lists are a faithful decomposition of the score.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::accumulator::l2_norm;
use super::importance::alpha;
use crate::error::{Error, Result};
use crate::featstore::{DatasetManifest, FeatureMap, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Excitatory,
    Inhibitory,
    Both,
}

impl Polarity {
    fn wants_excitatory(self) -> bool {
        matches!(self, Polarity::Excitatory | Polarity::Both)
    }

    fn wants_inhibitory(self) -> bool {
        matches!(self, Polarity::Inhibitory | Polarity::Both)
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "excitatory" => Ok(Polarity::Excitatory),
            "inhibitory" => Ok(Polarity::Inhibitory),
            "both" => Ok(Polarity::Both),
            other => Err(format!(
                "unknown polarity {other:?} (expected excitatory|inhibitory|both)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresenterEntry {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub alpha: f64,
    pub similarity: f64,
    pub representer_value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchQuery {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresenterResult {
    pub query: PatchQuery,
    pub polarity: Polarity,
    pub k: usize,
    pub tau: f64,
    #[serde(rename = "constant_C")]
    pub constant_c: f64,
    /// Descending by representer value.
    pub excitatory: Vec<RepresenterEntry>,
    /// Ascending by representer value.
    pub inhibitory: Vec<RepresenterEntry>,
    /// Sum of representer values over every nonzero training patch.
    pub total: f64,
    pub patches_scanned: u64,
    pub zero_norm_excluded: u64,
}

/// Unit-normalized training patches of one image.
#[derive(Debug, Clone)]
pub struct TrainingImage {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    dim: usize,
    norms: Vec<f64>,
    /// Patch-major, `dim` values per patch; zero rows for zero-norm patches.
    units: Vec<f64>,
}

impl TrainingImage {
    pub fn from_map(fm: &FeatureMap) -> Self {
        let dim = fm.channels();
        let mut norms = Vec::with_capacity(fm.patch_count());
        let mut units = vec![0.0; dim * fm.patch_count()];
        let mut buf = vec![0.0; dim];
        for p in 0..fm.patch_count() {
            fm.patch_into(p, &mut buf);
            let n = l2_norm(&buf);
            if n > 0.0 {
                for (dst, x) in units[p * dim..(p + 1) * dim].iter_mut().zip(&buf) {
                    *dst = x / n;
                }
            }
            norms.push(n);
        }
        TrainingImage {
            image_id: fm.image_id.clone(),
            height: fm.height(),
            width: fm.width(),
            dim,
            norms,
            units,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn unit(&self, patch: usize) -> &[f64] {
        &self.units[patch * self.dim..(patch + 1) * self.dim]
    }
}

fn excitatory_order(a: &RepresenterEntry, b: &RepresenterEntry) -> Ordering {
    b.representer_value
        .total_cmp(&a.representer_value)
        .then_with(|| key_order(a, b))
}

fn inhibitory_order(a: &RepresenterEntry, b: &RepresenterEntry) -> Ordering {
    a.representer_value
        .total_cmp(&b.representer_value)
        .then_with(|| key_order(a, b))
}

fn key_order(a: &RepresenterEntry, b: &RepresenterEntry) -> Ordering {
    (a.image_id.as_str(), a.row, a.col).cmp(&(b.image_id.as_str(), b.row, b.col))
}

struct Partial {
    top: Vec<RepresenterEntry>,
    bottom: Vec<RepresenterEntry>,
    sum: f64,
    scanned: u64,
    zeros: u64,
}

struct QueryParams<'a> {
    unit: &'a [f64],
    tau: f64,
    constant_c: f64,
    k: usize,
    polarity: Polarity,
}

fn score_image(img: &TrainingImage, q: &QueryParams<'_>) -> Partial {
    let mut all = Vec::with_capacity(img.norms.len());
    let mut sum = 0.0;
    let mut zeros = 0;
    for (p, &norm) in img.norms.iter().enumerate() {
        if norm == 0.0 {
            zeros += 1;
            continue;
        }
        let similarity: f64 = img.unit(p).iter().zip(q.unit).map(|(a, b)| a * b).sum();
        let a = alpha(norm, q.tau, q.constant_c);
        let value = a * similarity;
        sum += value;
        all.push(RepresenterEntry {
            image_id: img.image_id.clone(),
            row: p / img.width,
            col: p % img.width,
            alpha: a,
            similarity,
            representer_value: value,
        });
    }
    let take = |order: fn(&RepresenterEntry, &RepresenterEntry) -> Ordering| {
        let mut v = all.clone();
        v.sort_by(order);
        v.truncate(q.k);
        v
    };
    Partial {
        top: if q.polarity.wants_excitatory() {
            take(excitatory_order)
        } else {
            Vec::new()
        },
        bottom: if q.polarity.wants_inhibitory() {
            take(inhibitory_order)
        } else {
            Vec::new()
        },
        sum,
        scanned: img.norms.len() as u64,
        zeros,
    }
}

fn query_unit(query: &FeatureMap, row: usize, col: usize) -> Result<Vec<f64>> {
    if row >= query.height() || col >= query.width() {
        return Err(Error::PatchOutOfRange {
            row,
            col,
            height: query.height(),
            width: query.width(),
        });
    }
    let f = query.patch(row * query.width() + col);
    let n = l2_norm(&f);
    if n == 0.0 {
        return Err(Error::ZeroNormQuery {
            image_id: query.image_id.clone(),
            row,
            col,
        });
    }
    Ok(f.into_iter().map(|x| x / n).collect())
}

/// Merges per-image partial results in the order given.
fn merge_partials(
    partials: Vec<Partial>,
    k: usize,
    polarity: Polarity,
) -> (Vec<RepresenterEntry>, Vec<RepresenterEntry>, f64, u64, u64) {
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    let mut sum = 0.0;
    let mut scanned = 0;
    let mut zeros = 0;
    for p in partials {
        top.extend(p.top);
        bottom.extend(p.bottom);
        sum += p.sum;
        scanned += p.scanned;
        zeros += p.zeros;
    }
    top.sort_by(excitatory_order);
    top.truncate(k);
    bottom.sort_by(inhibitory_order);
    bottom.truncate(k);
    if polarity == Polarity::Both {
        let taken: HashSet<(String, usize, usize)> = top
            .iter()
            .map(|e| (e.image_id.clone(), e.row, e.col))
            .collect();
        bottom.retain(|e| !taken.contains(&(e.image_id.clone(), e.row, e.col)));
    }
    (top, bottom, sum, scanned, zeros)
}

fn check_query(query: &FeatureMap, dim: Option<usize>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if let Some(d) = dim {
        if d != query.channels() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: query.channels(),
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    query: &FeatureMap,
    row: usize,
    col: usize,
    k: usize,
    polarity: Polarity,
    tau: f64,
    constant_c: f64,
    partials: Vec<Partial>,
) -> RepresenterResult {
    let (excitatory, inhibitory, total, patches_scanned, zero_norm_excluded) =
        merge_partials(partials, k, polarity);
    RepresenterResult {
        query: PatchQuery {
            image_id: query.image_id.clone(),
            row,
            col,
        },
        polarity,
        k,
        tau,
        constant_c,
        excitatory,
        inhibitory,
        total,
        patches_scanned,
        zero_norm_excluded,
    }
}

/// In-memory training patches for repeated queries.
#[derive(Debug, Clone)]
pub struct RepresenterIndex {
    images: Vec<TrainingImage>,
    pub tau: f64,
    pub constant_c: f64,
}

impl RepresenterIndex {
    pub fn new(images: Vec<TrainingImage>, tau: f64, constant_c: f64) -> Result<Self> {
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.dim != first.dim) {
                return Err(Error::DimensionMismatch {
                    expected: first.dim,
                    found: bad.dim,
                });
            }
        }
        Ok(RepresenterIndex {
            images,
            tau,
            constant_c,
        })
    }

    /// Loads every listed entry's feature map.
    pub fn load(
        manifest: &DatasetManifest,
        entries: &[&ManifestEntry],
        tau: f64,
        constant_c: f64,
    ) -> Result<Self> {
        let images = entries
            .par_iter()
            .map(|e| Ok(TrainingImage::from_map(&manifest.load_feature_map(e)?)))
            .collect::<Result<Vec<_>>>()?;
        RepresenterIndex::new(images, tau, constant_c)
    }

    pub fn images(&self) -> &[TrainingImage] {
        &self.images
    }

    pub fn patch_count(&self) -> usize {
        self.images.iter().map(|i| i.norms.len()).sum()
    }

    pub fn query(
        &self,
        query: &FeatureMap,
        row: usize,
        col: usize,
        k: usize,
        polarity: Polarity,
    ) -> Result<RepresenterResult> {
        check_query(query, self.images.first().map(|i| i.dim), k)?;
        let unit = query_unit(query, row, col)?;
        let params = QueryParams {
            unit: &unit,
            tau: self.tau,
            constant_c: self.constant_c,
            k,
            polarity,
        };
        let partials: Vec<Partial> = self
            .images
            .par_iter()
            .map(|img| score_image(img, &params))
            .collect();
        Ok(finish(
            query,
            row,
            col,
            k,
            polarity,
            self.tau,
            self.constant_c,
            partials,
        ))
    }
}

/// Scans training feature files without keeping them resident.
#[allow(clippy::too_many_arguments)]
pub fn representer_topk(
    manifest: &DatasetManifest,
    training: &[&ManifestEntry],
    tau: f64,
    constant_c: f64,
    query: &FeatureMap,
    row: usize,
    col: usize,
    k: usize,
    polarity: Polarity,
) -> Result<RepresenterResult> {
    check_query(query, None, k)?;
    let unit = query_unit(query, row, col)?;
    let params = QueryParams {
        unit: &unit,
        tau,
        constant_c,
        k,
        polarity,
    };
    let partials = training
        .par_iter()
        .map(|e| {
            let fm = manifest.load_feature_map(e)?;
            if fm.channels() != query.channels() {
                return Err(Error::DimensionMismatch {
                    expected: query.channels(),
                    found: fm.channels(),
                });
            }
            Ok(score_image(&TrainingImage::from_map(&fm), &params))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(
        query, row, col, k, polarity, tau, constant_c, partials,
    ))
}
