//! Streaming sufficient statistics for the foreground predictor.
//!
//! `v` is the sum of raw patch features and `u` the sum of their unit-normalized
//! counterparts. Both are kept in f64 regardless of the f32 payload; optional
//! Neumaier compensation tracks the rounding error of each running sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::FeatureMap;

/// L2 norm in f64.
pub fn l2_norm(f: &[f64]) -> f64 {
    f.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Returns `f / ‖f‖`, or `None` when `f` is the zero vector.
pub fn normalize_feature(f: &[f64]) -> Result<Option<Vec<f64>>> {
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("feature vector"));
    }
    let norm = l2_norm(f);
    if norm == 0.0 {
        return Ok(None);
    }
    Ok(Some(f.iter().map(|x| x / norm).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    dim: usize,
    v: Vec<f64>,
    u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compensation: Option<Compensation>,
    pub patch_count: u64,
    pub image_count: u64,
    pub skipped_zero_vectors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Compensation {
    v: Vec<f64>,
    u: Vec<f64>,
}

#[inline]
fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl Accumulator {
    pub fn new(dim: usize) -> Self {
        Accumulator {
            dim,
            v: vec![0.0; dim],
            u: vec![0.0; dim],
            compensation: None,
            patch_count: 0,
            image_count: 0,
            skipped_zero_vectors: 0,
        }
    }

    /// Accumulator with Neumaier-compensated running sums.
    pub fn compensated(dim: usize) -> Self {
        Accumulator {
            compensation: Some(Compensation {
                v: vec![0.0; dim],
                u: vec![0.0; dim],
            }),
            ..Accumulator::new(dim)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_compensated(&self) -> bool {
        self.compensation.is_some()
    }

    /// Σ f over accumulated patches.
    pub fn v(&self) -> Vec<f64> {
        match &self.compensation {
            Some(c) => self.v.iter().zip(&c.v).map(|(s, e)| s + e).collect(),
            None => self.v.clone(),
        }
    }

    /// Σ f̂ over accumulated nonzero patches.
    pub fn u(&self) -> Vec<f64> {
        match &self.compensation {
            Some(c) => self.u.iter().zip(&c.u).map(|(s, e)| s + e).collect(),
            None => self.u.clone(),
        }
    }

    pub fn nonzero_patches(&self) -> u64 {
        self.patch_count - self.skipped_zero_vectors
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// Adds one patch vector. Zero vectors only bump the skip counter.
    pub fn add_patch(&mut self, f: &[f64]) -> Result<()> {
        self.check_dim(f.len())?;
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        self.add_patch_unchecked(f);
        Ok(())
    }

    fn add_patch_unchecked(&mut self, f: &[f64]) {
        self.patch_count += 1;
        let norm = l2_norm(f);
        match &mut self.compensation {
            None => {
                for (s, x) in self.v.iter_mut().zip(f) {
                    *s += x;
                }
                if norm > 0.0 {
                    for (s, x) in self.u.iter_mut().zip(f) {
                        *s += x / norm;
                    }
                }
            }
            Some(c) => {
                for ((s, comp), x) in self.v.iter_mut().zip(c.v.iter_mut()).zip(f) {
                    neumaier_add(s, comp, *x);
                }
                if norm > 0.0 {
                    for ((s, comp), x) in self.u.iter_mut().zip(c.u.iter_mut()).zip(f) {
                        neumaier_add(s, comp, x / norm);
                    }
                }
            }
        }
        if norm == 0.0 {
            self.skipped_zero_vectors += 1;
        }
    }

    /// Folds every patch of `fm` into the running sums.
    pub fn add_map(&mut self, fm: &FeatureMap) -> Result<()> {
        self.check_dim(fm.channels())?;
        let mut buf = vec![0.0; self.dim];
        for p in 0..fm.patch_count() {
            fm.patch_into(p, &mut buf);
            self.add_patch_unchecked(&buf);
        }
        self.image_count += 1;
        Ok(())
    }

    pub fn accumulate(mut self, fm: &FeatureMap) -> Result<Self> {
        self.add_map(fm)?;
        Ok(self)
    }

    /// Component-wise sum of two accumulators.
    pub fn merge(&self, other: &Accumulator) -> Result<Accumulator> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &Accumulator) -> Result<()> {
        self.check_dim(other.dim)?;
        match (&mut self.compensation, &other.compensation) {
            (None, None) => {
                for (a, b) in self.v.iter_mut().zip(&other.v) {
                    *a += b;
                }
                for (a, b) in self.u.iter_mut().zip(&other.u) {
                    *a += b;
                }
            }
            (Some(c), oc) => {
                for i in 0..self.dim {
                    neumaier_add(&mut self.v[i], &mut c.v[i], other.v[i]);
                    neumaier_add(&mut self.u[i], &mut c.u[i], other.u[i]);
                }
                if let Some(oc) = oc {
                    for i in 0..self.dim {
                        c.v[i] += oc.v[i];
                        c.u[i] += oc.u[i];
                    }
                }
            }
            (None, Some(_)) => {
                // Promote so the other side's compensation terms are not lost.
                let mut promoted = Accumulator::compensated(self.dim);
                promoted.merge_from(self)?;
                promoted.merge_from(other)?;
                *self = promoted;
                return Ok(());
            }
        }
        self.patch_count += other.patch_count;
        self.image_count += other.image_count;
        self.skipped_zero_vectors += other.skipped_zero_vectors;
        Ok(())
    }
}
