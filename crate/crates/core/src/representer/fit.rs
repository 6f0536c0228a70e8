//! Streaming fit over a manifest's training split.
//!
//! Images are read one at a time per worker and folded into fixed-size chunks;
//! chunk accumulators are merged in manifest order so the result does not
//! depend on the number of threads.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::accumulator::Accumulator;
use super::predictor::{finalize_predictor, finalize_tau, ForegroundPredictor, TauScope};
use crate::error::{Error, Result};
use crate::featstore::{DatasetManifest, ManifestEntry, Split};

/// Images folded sequentially before a merge.
pub const CHUNK_IMAGES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub classwise: bool,
    pub sample_rate: f64,
    pub seed: u64,
    pub constant_c: f64,
    /// Classwise only: per-class τ_c, or one τ from the pooled statistics.
    pub tau_scope: TauScope,
    pub tau_override: Option<f64>,
    pub compensated: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            classwise: false,
            sample_rate: 1.0,
            seed: 0,
            constant_c: 1.0,
            tau_scope: TauScope::PerClass,
            tau_override: None,
            compensated: false,
        }
    }
}

/// A group of training entries fitted together; `class_id` is `None` for the
/// class-agnostic fit.
#[derive(Debug, Clone)]
pub struct Stratum<'a> {
    pub class_id: Option<u32>,
    pub entries: Vec<&'a ManifestEntry>,
}

fn sample_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).clamp(1, n)
}

/// Deterministically samples training entries. In classwise mode each class is
/// sampled separately (ascending class order, one RNG stream), so every class
/// keeps at least one image. Selected entries stay in manifest order.
pub fn sample_training_set(
    manifest: &DatasetManifest,
    sample_rate: f64,
    seed: u64,
    classwise: bool,
) -> Result<Vec<Stratum<'_>>> {
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(Error::param(
            "sample_rate",
            format!("must lie in (0, 1], got {sample_rate}"),
        ));
    }
    let train: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::DegenerateDataset(
            "empty sample: no training entries".into(),
        ));
    }

    let groups: Vec<(Option<u32>, Vec<&ManifestEntry>)> = if classwise {
        let mut by_class: BTreeMap<u32, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &train {
            let c = e.class_id.ok_or_else(|| Error::InvalidEntry {
                image_id: e.image_id.clone(),
                reason: "classwise fit requires class_id on every training entry".into(),
            })?;
            by_class.entry(c).or_default().push(e);
        }
        by_class.into_iter().map(|(c, v)| (Some(c), v)).collect()
    } else {
        vec![(None, train)]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(groups
        .into_iter()
        .map(|(class_id, entries)| {
            let entries = if sample_rate >= 1.0 {
                entries
            } else {
                let k = sample_count(entries.len(), sample_rate);
                let mut picked = index::sample(&mut rng, entries.len(), k).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| entries[i]).collect()
            };
            Stratum { class_id, entries }
        })
        .collect())
}

fn accumulate_chunk(
    manifest: &DatasetManifest,
    chunk: &[&ManifestEntry],
    dim: usize,
    compensated: bool,
) -> Result<Accumulator> {
    let mut acc = if compensated {
        Accumulator::compensated(dim)
    } else {
        Accumulator::new(dim)
    };
    for entry in chunk {
        let fm = manifest.load_feature_map(entry)?;
        acc.add_map(&fm)?;
    }
    Ok(acc)
}

/// Streams the listed entries into one accumulator.
///
/// At most one feature map per worker thread is resident at a time.
pub fn accumulate_entries(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    compensated: bool,
) -> Result<Accumulator> {
    let first = entries
        .first()
        .ok_or_else(|| Error::DegenerateDataset("empty sample".into()))?;
    let dim = crate::featstore::read_feature_header(&manifest.feature_path(first))?.channels;
    let mut total = if compensated {
        Accumulator::compensated(dim)
    } else {
        Accumulator::new(dim)
    };
    let window = rayon::current_num_threads().max(1) * CHUNK_IMAGES;
    for group in entries.chunks(window) {
        let partials: Vec<Result<Accumulator>> = group
            .par_chunks(CHUNK_IMAGES)
            .map(|chunk| accumulate_chunk(manifest, chunk, dim, compensated))
            .collect();
        for partial in partials {
            total.merge_from(&partial?)?;
        }
    }
    Ok(total)
}

/// Fits one class-agnostic predictor, or one per class in classwise mode.
pub fn fit(manifest: &DatasetManifest, opts: &FitOptions) -> Result<Vec<ForegroundPredictor>> {
    let strata = sample_training_set(manifest, opts.sample_rate, opts.seed, opts.classwise)?;
    let accs = strata
        .iter()
        .map(|s| {
            Ok((
                s.class_id,
                accumulate_entries(manifest, &s.entries, opts.compensated)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let (shared_tau, scope) = match (opts.tau_override, opts.classwise, opts.tau_scope) {
        (Some(t), _, _) => (Some(t), TauScope::Override),
        (None, true, TauScope::Global) => {
            let mut pooled = Accumulator::new(accs[0].1.dim());
            for (_, a) in &accs {
                pooled.merge_from(a)?;
            }
            (Some(finalize_tau(&pooled)?), TauScope::Global)
        }
        _ => (None, TauScope::PerClass),
    };

    accs.iter()
        .map(|(class_id, acc)| {
            let mut p = finalize_predictor(acc, opts.constant_c, shared_tau)?;
            p.class_id = *class_id;
            p.provenance.manifest_digest = manifest.digest.clone();
            p.provenance.sample_rate = opts.sample_rate;
            p.provenance.seed = opts.seed;
            p.provenance.tau_scope = scope;
            Ok(p)
        })
        .collect()
}
