//! RPSF v1 feature files.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `"RPSF"`                |
//! | 4      | 2    | version, u16 = 1              |
//! | 6      | 1    | dtype, u8 = 0 (f32le)         |
//! | 7      | 1    | reserved, u8 = 0              |
//! | 8      | 4    | C, u32                        |
//! | 12     | 4    | H, u32                        |
//! | 16     | 4    | W, u32                        |
//! | 20     | 4·CHW| payload, `[channel][row][col]`|

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"RPSF";
pub const VERSION: u16 = 1;
pub const DTYPE_F32LE: u8 = 0;
pub const HEADER_LEN: usize = 20;

/// Dimensions declared by an RPSF header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureHeader {
    pub fn element_count(&self) -> u64 {
        self.channels as u64 * self.height as u64 * self.width as u64
    }

    pub fn payload_len(&self) -> u64 {
        self.element_count() * 4
    }
}

/// One image's dense feature tensor, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub image_id: String,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        image_id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let fm = FeatureMap {
            image_id: image_id.into(),
            channels,
            height,
            width,
            data,
        };
        fm.validate()?;
        Ok(fm)
    }

    /// Builds a map from patch vectors laid out row-major over the grid.
    pub fn from_patches(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        patches: &[Vec<f32>],
    ) -> Result<Self> {
        let image_id = image_id.into();
        if patches.len() != height * width {
            return Err(Error::InvalidFeatureMap {
                image_id,
                reason: format!("{} patches for a {height}x{width} grid", patches.len()),
            });
        }
        let channels = patches.first().map_or(0, Vec::len);
        let mut data = vec![0.0f32; channels * height * width];
        for (p, patch) in patches.iter().enumerate() {
            if patch.len() != channels {
                return Err(Error::InvalidFeatureMap {
                    image_id,
                    reason: format!(
                        "patch {p} has {} channels, expected {channels}",
                        patch.len()
                    ),
                });
            }
            for (c, &x) in patch.iter().enumerate() {
                data[c * height * width + p] = x;
            }
        }
        FeatureMap::new(image_id, channels, height, width, data)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidFeatureMap {
                image_id: self.image_id.clone(),
                reason,
            })
        };
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return fail(format!(
                "dimensions must be positive, got C={} H={} W={}",
                self.channels, self.height, self.width
            ));
        }
        if self.channels > u32::MAX as usize
            || self.height > u32::MAX as usize
            || self.width > u32::MAX as usize
        {
            return fail("dimension exceeds u32".into());
        }
        let expected = self.channels * self.height * self.width;
        if self.data.len() != expected {
            return fail(format!(
                "data length {} != C*H*W = {expected}",
                self.data.len()
            ));
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return fail(format!("non-finite value {} at element {i}", self.data[i]));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_count(&self) -> usize {
        self.height * self.width
    }

    pub fn header(&self) -> FeatureHeader {
        FeatureHeader {
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// Copies the feature vector of patch `index` (row-major) into `out` as f64.
    pub fn patch_into(&self, index: usize, out: &mut [f64]) {
        let plane = self.height * self.width;
        for (c, slot) in out.iter_mut().enumerate().take(self.channels) {
            *slot = self.data[c * plane + index] as f64;
        }
    }

    pub fn patch(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.patch_into(index, &mut out);
        out
    }

    /// Iterates patch vectors in row-major order.
    pub fn patches(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.patch_count()).map(move |i| self.patch(i))
    }

    /// Multiplies every element by `s`, rounding back to f32.
    pub fn scaled(&self, s: f32) -> FeatureMap {
        FeatureMap {
            image_id: self.image_id.clone(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

fn encode_header(h: &FeatureHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(MAGIC);
    out[4..6].copy_from_slice(&VERSION.to_le_bytes());
    out[6] = DTYPE_F32LE;
    out[7] = 0;
    out[8..12].copy_from_slice(&(h.channels as u32).to_le_bytes());
    out[12..16].copy_from_slice(&(h.height as u32).to_le_bytes());
    out[16..20].copy_from_slice(&(h.width as u32).to_le_bytes());
    out
}

fn decode_header(path: &Path, buf: &[u8; HEADER_LEN]) -> Result<FeatureHeader> {
    if &buf[0..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&buf[0..4]).into_owned(),
        });
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    if buf[6] != DTYPE_F32LE {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            found: buf[6],
        });
    }
    let word = |o: usize| u32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]) as usize;
    let header = FeatureHeader {
        channels: word(8),
        height: word(12),
        width: word(16),
    };
    if header.channels == 0 || header.height == 0 || header.width == 0 {
        return Err(Error::InvalidFeatureMap {
            image_id: path.display().to_string(),
            reason: format!(
                "header declares zero dimension C={} H={} W={}",
                header.channels, header.height, header.width
            ),
        });
    }
    Ok(header)
}

/// Serializes a map to RPSF v1 bytes.
pub fn encode_feature_map(fm: &FeatureMap) -> Result<Vec<u8>> {
    fm.validate()?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + fm.data.len() * 4);
    bytes.extend_from_slice(&encode_header(&fm.header()));
    for x in &fm.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    Ok(bytes)
}

/// Writes `fm` to `path` atomically. Invalid maps are rejected before any I/O.
pub fn write_feature_map(fm: &FeatureMap, path: &Path) -> Result<()> {
    let bytes = encode_feature_map(fm)?;
    write_atomic(path, &bytes)
}

/// Reads and validates only the header, checking the file length against it.
pub fn read_feature_header(path: &Path) -> Result<FeatureHeader> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut buf = [0u8; HEADER_LEN];
    read_header_bytes(path, &mut file, len, &mut buf)?;
    let header = decode_header(path, &buf)?;
    check_payload_len(path, &header, len - HEADER_LEN as u64)?;
    Ok(header)
}

fn read_header_bytes(
    path: &Path,
    r: &mut impl Read,
    len: u64,
    buf: &mut [u8; HEADER_LEN],
) -> Result<()> {
    if len < HEADER_LEN as u64 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: len,
        });
    }
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn check_payload_len(path: &Path, header: &FeatureHeader, found: u64) -> Result<()> {
    let expected = header.payload_len();
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            found: found - expected,
        });
    }
    Ok(())
}

/// Reads an RPSF file. The image id is taken from the file stem; callers that
/// know the manifest id should use [`read_feature_map_as`].
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_feature_map_as(path, id)
}

pub fn read_feature_map_as(path: &Path, image_id: impl Into<String>) -> Result<FeatureMap> {
    let image_id = image_id.into();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    let mut buf = [0u8; HEADER_LEN];
    read_header_bytes(path, &mut reader, len, &mut buf)?;
    let header = decode_header(path, &buf)?;
    check_payload_len(path, &header, len - HEADER_LEN as u64)?;

    let mut payload = vec![0u8; header.payload_len() as usize];
    reader
        .read_exact(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidFeatureMap {
            image_id,
            reason: format!(
                "{}: non-finite payload value at element {i}",
                path.display()
            ),
        });
    }
    FeatureMap::new(image_id, header.channels, header.height, header.width, data)
}
