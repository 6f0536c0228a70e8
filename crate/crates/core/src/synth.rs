//! Synthetic datasets with a planted foreground box per image.
//!
//! Foreground patches have larger feature norms than background patches and
//! point near a per-class foreground prototype; background patches point near
//! a shared background prototype. Both cues matter to the predictor: the norm
//! sets each training patch's importance, the direction sets its similarity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{
    save_manifest, write_feature_map, write_pgm, BBox, DatasetManifest, FeatureMap, GrayImage,
    ManifestEntry, Split,
};

fn default_test_fraction() -> f64 {
    0.5
}
fn default_jitter() -> f64 {
    0.1
}
fn default_concentration() -> f64 {
    8.0
}
fn default_classes() -> u32 {
    1
}
fn default_true() -> bool {
    true
}
fn default_min_box() -> f64 {
    0.3
}
fn default_max_box() -> f64 {
    0.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub image_count: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub grid_width: usize,
    pub grid_height: usize,
    pub channels: usize,
    /// Same box for every image; random per image when absent.
    #[serde(default)]
    pub fixed_box: Option<BBox>,
    /// Random boxes span this fraction range of the grid in each dimension.
    #[serde(default = "default_min_box")]
    pub min_box_fraction: f64,
    #[serde(default = "default_max_box")]
    pub max_box_fraction: f64,
    pub fg_norm_mean: f64,
    pub bg_norm_mean: f64,
    /// Standard deviation of patch norms relative to their mean.
    #[serde(default = "default_jitter")]
    pub norm_jitter: f64,
    #[serde(default = "default_concentration")]
    pub fg_concentration: f64,
    #[serde(default = "default_concentration")]
    pub bg_concentration: f64,
    #[serde(default = "default_classes")]
    pub class_count: u32,
    #[serde(default = "default_true")]
    pub emit_masks: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// The separable reference configuration used by the end-to-end checks.
    pub fn separable(image_count: usize, seed: u64) -> Self {
        SynthSpec {
            image_count,
            test_fraction: 0.5,
            image_width: 64,
            image_height: 64,
            grid_width: 8,
            grid_height: 8,
            channels: 16,
            fixed_box: None,
            min_box_fraction: 0.3,
            max_box_fraction: 0.7,
            fg_norm_mean: 2.0,
            bg_norm_mean: 0.5,
            norm_jitter: 0.1,
            fg_concentration: 8.0,
            bg_concentration: 8.0,
            class_count: 1,
            emit_masks: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::param(name, reason));
        if self.image_count == 0 {
            return bad("image_count", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(
                "test_fraction",
                format!("must lie in [0, 1], got {}", self.test_fraction),
            );
        }
        if self.image_width == 0
            || self.image_height == 0
            || self.grid_width == 0
            || self.grid_height == 0
            || self.channels == 0
        {
            return bad(
                "geometry",
                "image size, grid size and channels must be positive".into(),
            );
        }
        if !(self.fg_norm_mean > 0.0 && self.bg_norm_mean > 0.0) {
            return bad("norm_mean", "fg/bg norm means must be positive".into());
        }
        if !(self.norm_jitter >= 0.0
            && self.fg_concentration >= 0.0
            && self.bg_concentration >= 0.0)
        {
            return bad(
                "jitter",
                "jitter and concentrations must be non-negative".into(),
            );
        }
        if !(0.0 < self.min_box_fraction
            && self.min_box_fraction <= self.max_box_fraction
            && self.max_box_fraction <= 1.0)
        {
            return bad("box_fraction", "need 0 < min <= max <= 1".into());
        }
        if self.class_count == 0 {
            return bad("class_count", "must be positive".into());
        }
        if let Some(b) = &self.fixed_box {
            if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > self.image_width || b.y1 > self.image_height {
                return bad(
                    "fixed_box",
                    format!(
                        "{b} does not fit a {}x{} image",
                        self.image_width, self.image_height
                    ),
                );
            }
            if self.foreground_patches(b).iter().all(|f| !f) {
                return bad(
                    "fixed_box",
                    format!(
                        "{b} covers no patch center of the {}x{} grid",
                        self.grid_width, self.grid_height
                    ),
                );
            }
        }
        Ok(())
    }

    /// A patch is foreground when its center, in pixels, lies inside the box.
    pub fn foreground_patches(&self, b: &BBox) -> Vec<bool> {
        let sx = self.image_width as f64 / self.grid_width as f64;
        let sy = self.image_height as f64 / self.grid_height as f64;
        let mut out = Vec::with_capacity(self.grid_width * self.grid_height);
        for r in 0..self.grid_height {
            let cy = (r as f64 + 0.5) * sy;
            for c in 0..self.grid_width {
                let cx = (c as f64 + 0.5) * sx;
                out.push(
                    cx >= b.x0 as f64 && cx < b.x1 as f64 && cy >= b.y0 as f64 && cy < b.y1 as f64,
                );
            }
        }
        out
    }

    fn test_count(&self) -> usize {
        (self.test_fraction * self.image_count as f64).round() as usize
    }

    fn random_box(&self, rng: &mut ChaCha8Rng) -> BBox {
        let mut span = |cells: usize| {
            let lo = ((self.min_box_fraction * cells as f64).ceil() as usize).clamp(1, cells);
            let hi = ((self.max_box_fraction * cells as f64).floor() as usize).clamp(lo, cells);
            let len = rng.random_range(lo..=hi);
            let start = rng.random_range(0..=cells - len);
            (start, start + len)
        };
        let (c0, c1) = span(self.grid_width);
        let (r0, r1) = span(self.grid_height);
        let px = |c: usize, cells: usize, size: u32| (c as u64 * size as u64 / cells as u64) as u32;
        BBox::new(
            px(c0, self.grid_width, self.image_width),
            px(r0, self.grid_height, self.image_height),
            px(c1, self.grid_width, self.image_width),
            px(r1, self.grid_height, self.image_height),
        )
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn clustered_direction(rng: &mut ChaCha8Rng, prototype: &[f64], concentration: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = prototype
            .iter()
            .map(|p| {
                concentration * p + {
                    let z: f64 = StandardNormal.sample(rng);
                    z
                }
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One generated image before it is written out.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub entry: ManifestEntry,
    pub features: FeatureMap,
    pub mask: Option<GrayImage>,
}

struct Prototypes {
    background: Vec<f64>,
    foreground: Vec<Vec<f64>>,
}

fn prototypes(spec: &SynthSpec) -> Prototypes {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = random_unit(&mut rng, spec.channels);
    let foreground = (0..spec.class_count)
        .map(|_| random_unit(&mut rng, spec.channels))
        .collect();
    Prototypes {
        background,
        foreground,
    }
}

fn image_id(i: usize) -> String {
    format!("img_{i:05}")
}

fn generate_image(spec: &SynthSpec, protos: &Prototypes, index: usize) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let bbox = match spec.fixed_box {
        Some(b) => b,
        None => spec.random_box(&mut rng),
    };
    let class_id = (index as u32) % spec.class_count;
    let fg = spec.foreground_patches(&bbox);
    let fg_norm = Normal::new(spec.fg_norm_mean, spec.norm_jitter * spec.fg_norm_mean)
        .map_err(|e| Error::param("fg_norm_mean", e.to_string()))?;
    let bg_norm = Normal::new(spec.bg_norm_mean, spec.norm_jitter * spec.bg_norm_mean)
        .map_err(|e| Error::param("bg_norm_mean", e.to_string()))?;

    let id = image_id(index);
    let patches: Vec<Vec<f32>> = fg
        .iter()
        .map(|&is_fg| {
            let (proto, kappa, dist, mean) = if is_fg {
                (
                    &protos.foreground[class_id as usize],
                    spec.fg_concentration,
                    &fg_norm,
                    spec.fg_norm_mean,
                )
            } else {
                (
                    &protos.background,
                    spec.bg_concentration,
                    &bg_norm,
                    spec.bg_norm_mean,
                )
            };
            let dir = clustered_direction(&mut rng, proto, kappa);
            let norm = dist.sample(&mut rng).max(0.05 * mean);
            dir.iter().map(|d| (d * norm) as f32).collect()
        })
        .collect();
    let features =
        FeatureMap::from_patches(id.clone(), spec.grid_height, spec.grid_width, &patches)?;

    let mask = spec.emit_masks.then(|| {
        let mut img = GrayImage::new(spec.image_width as usize, spec.image_height as usize);
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                img.set(x as usize, y as usize, 255);
            }
        }
        img
    });

    let split = if index < spec.image_count - spec.test_count() {
        Split::Train
    } else {
        Split::Test
    };
    Ok(SynthImage {
        entry: ManifestEntry {
            image_id: id.clone(),
            feature_path: PathBuf::from(format!("features/{id}.rpsf")),
            image_width: spec.image_width,
            image_height: spec.image_height,
            class_id: Some(class_id),
            gt_boxes: Some(vec![bbox]),
            gt_mask_path: spec
                .emit_masks
                .then(|| PathBuf::from(format!("masks/{id}.pgm"))),
            split,
        },
        features,
        mask,
    })
}

/// Generates image `index` in memory without touching the filesystem.
pub fn generate_in_memory(spec: &SynthSpec, index: usize) -> Result<SynthImage> {
    spec.validate()?;
    generate_image(spec, &prototypes(spec), index)
}

/// Writes feature files, masks and `manifest.json` under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let protos = prototypes(spec);
    for sub in ["features", "masks"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let entries = (0..spec.image_count)
        .into_par_iter()
        .map(|i| {
            let img = generate_image(spec, &protos, i)?;
            write_feature_map(&img.features, &out_dir.join(&img.entry.feature_path))?;
            if let (Some(mask), Some(rel)) = (&img.mask, &img.entry.gt_mask_path) {
                write_pgm(mask, &out_dir.join(rel))?;
            }
            Ok(img.entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), serde_json::json!("reprloc synth"));
    metadata.insert(
        "synth_spec".to_string(),
        serde_json::to_value(spec).expect("spec serializes"),
    );
    save_manifest(
        &out_dir.join("manifest.json"),
        Path::new("."),
        &entries,
        &metadata,
    )
}
