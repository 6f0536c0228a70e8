//! Dataset manifest: one JSON document listing every image, its feature file,
//! original geometry, labels and ground truth.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_json_atomic;

pub const MANIFEST_VERSION: u32 = 1;

/// Pixel box, half-open: covers columns `x0..x1` and rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", from = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 < x1 && y0 < y1, "degenerate box");
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u64 {
        (self.x1 - self.x0) as u64
    }

    pub fn height(&self) -> u64 {
        (self.y1 - self.y0) as u64
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w as u64 * h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl From<[u32; 4]> for BBox {
    fn from(a: [u32; 4]) -> Self {
        BBox {
            x0: a[0],
            y0: a[1],
            x1: a[2],
            y1: a[3],
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {})", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub feature_path: PathBuf,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<Vec<BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    /// Root as written in the file (relative roots are relative to the manifest's directory).
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub metadata: BTreeMap<String, serde_json::Value>,
    /// Root resolved against the manifest location.
    pub resolved_root: PathBuf,
    /// Lowercase hex SHA-256 of the manifest file bytes.
    pub digest: String,
}

// Wire form. Boxes are parsed as signed integers so that negative coordinates
// produce a box error rather than a type error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    version: u32,
    #[serde(default)]
    root: Option<PathBuf>,
    entries: Vec<RawEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    image_id: String,
    feature_path: PathBuf,
    image_width: u32,
    image_height: u32,
    #[serde(default)]
    class_id: Option<u32>,
    #[serde(default)]
    gt_boxes: Option<Vec<[i64; 4]>>,
    #[serde(default)]
    gt_mask_path: Option<PathBuf>,
    split: Split,
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    version: u32,
    root: &'a Path,
    metadata: &'a BTreeMap<String, serde_json::Value>,
    entries: &'a [ManifestEntry],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_box(image_id: &str, index: usize, b: [i64; 4], w: u32, h: u32) -> Result<BBox> {
    let [x0, y0, x1, y1] = b;
    let reason = if x0 < 0 || y0 < 0 {
        Some("negative coordinate".to_string())
    } else if x0 >= x1 || y0 >= y1 {
        Some("requires x0 < x1 and y0 < y1".to_string())
    } else if x1 > w as i64 || y1 > h as i64 {
        Some(format!("exceeds image bounds {w}x{h}"))
    } else {
        None
    };
    match reason {
        Some(reason) => Err(Error::MalformedBox {
            image_id: image_id.to_string(),
            index,
            bbox: b,
            reason,
        }),
        None => Ok(BBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32)),
    }
}

impl DatasetManifest {
    /// Parses manifest bytes. `origin` is the manifest path, used for relative
    /// root resolution and error messages.
    pub fn from_slice(bytes: &[u8], origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let raw: RawManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::ManifestParse {
                path: origin.to_path_buf(),
                message: format!(
                    "at `{}` (line {}, column {}): {}",
                    e.path(),
                    inner.line(),
                    inner.column(),
                    inner
                ),
            }
        })?;
        if raw.version != MANIFEST_VERSION {
            return Err(Error::ManifestParse {
                path: origin.to_path_buf(),
                message: format!(
                    "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                    raw.version
                ),
            });
        }

        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(raw.entries.len());
        for e in raw.entries {
            if !seen.insert(e.image_id.clone()) {
                return Err(Error::DuplicateImageId(e.image_id));
            }
            if e.image_id.is_empty() {
                return Err(Error::InvalidEntry {
                    image_id: e.image_id,
                    reason: "empty image_id".into(),
                });
            }
            if e.image_width == 0 || e.image_height == 0 {
                return Err(Error::InvalidEntry {
                    image_id: e.image_id,
                    reason: format!(
                        "image geometry must be positive, got {}x{}",
                        e.image_width, e.image_height
                    ),
                });
            }
            let gt_boxes = match e.gt_boxes {
                Some(boxes) => Some(
                    boxes
                        .into_iter()
                        .enumerate()
                        .map(|(i, b)| check_box(&e.image_id, i, b, e.image_width, e.image_height))
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            entries.push(ManifestEntry {
                image_id: e.image_id,
                feature_path: e.feature_path,
                image_width: e.image_width,
                image_height: e.image_height,
                class_id: e.class_id,
                gt_boxes,
                gt_mask_path: e.gt_mask_path,
                split: e.split,
            });
        }

        let root = raw.root.unwrap_or_else(|| PathBuf::from("."));
        let base = origin.parent().unwrap_or_else(|| Path::new("."));
        let resolved_root = if root.is_absolute() {
            root.clone()
        } else {
            base.join(&root)
        };
        Ok(DatasetManifest {
            version: raw.version,
            root,
            entries,
            metadata: raw.metadata,
            resolved_root,
            digest: sha256_hex(bytes),
        })
    }

    pub fn entry(&self, image_id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.image_id == image_id)
            .ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.resolved_root.join(&entry.feature_path)
    }

    pub fn mask_path(&self, entry: &ManifestEntry) -> Option<PathBuf> {
        entry
            .gt_mask_path
            .as_ref()
            .map(|p| self.resolved_root.join(p))
    }

    pub fn load_feature_map(&self, entry: &ManifestEntry) -> Result<super::FeatureMap> {
        super::read_feature_map_as(&self.feature_path(entry), entry.image_id.clone())
    }

    /// Serializes the manifest (root written as given, not resolved).
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let out = ManifestOut {
            version: self.version,
            root: &self.root,
            metadata: &self.metadata,
            entries: &self.entries,
        };
        let mut bytes = serde_json::to_vec_pretty(&out).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_slice(&bytes, path)
}

/// Writes a manifest built in memory; entries are validated by re-parsing.
pub fn save_manifest(
    path: &Path,
    root: &Path,
    entries: &[ManifestEntry],
    metadata: &BTreeMap<String, serde_json::Value>,
) -> Result<DatasetManifest> {
    let out = ManifestOut {
        version: MANIFEST_VERSION,
        root,
        metadata,
        entries,
    };
    write_json_atomic(path, &out)?;
    load_manifest(path)
}
