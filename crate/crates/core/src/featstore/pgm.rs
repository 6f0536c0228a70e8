//! Binary 8-bit PGM (P5) masks and map exports.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Nonzero pixels are foreground.
    pub fn to_mask(&self) -> Vec<bool> {
        self.pixels.iter().map(|&p| p != 0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn pgm_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Pgm {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses the P5 header; returns (width, height, maxval, payload offset).
fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_err(path, "truncated header"));
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" {
        return Err(pgm_err(
            path,
            format!(
                "magic {:?}, expected P5",
                String::from_utf8_lossy(tokens[0])
            ),
        ));
    }
    let num = |t: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| pgm_err(path, format!("bad {what}")))
    };
    let width = num(tokens[1], "width")?;
    let height = num(tokens[2], "height")?;
    let maxval = num(tokens[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(pgm_err(
            path,
            format!("maxval {maxval} unsupported (8-bit only)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(pgm_err(path, "missing raster"));
    }
    Ok((width, height, maxval, pos + 1))
}

pub fn read_pgm_header(path: &Path) -> Result<(usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, _, _) = parse_header(path, &bytes)?;
    Ok((w, h))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, _, offset) = parse_header(path, &bytes)?;
    let need = width * height;
    if bytes.len() - offset < need {
        return Err(pgm_err(
            path,
            format!("raster has {} bytes, expected {need}", bytes.len() - offset),
        ));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[offset..offset + need].to_vec(),
    })
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    write_atomic(path, &img.encode())
}
