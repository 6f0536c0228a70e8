use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::{read_feature_header, read_pgm_header, DatasetManifest};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    MissingFeatureFile,
    BadFeatureFile,
    ChannelMismatch,
    MissingMask,
    BadMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationFailure {
    pub image_id: String,
    pub kind: FailureKind,
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries_checked: usize,
    /// Majority channel count across readable feature files.
    pub channels: Option<usize>,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks every entry's feature header and mask without stopping at the first failure.
pub fn validate_dataset(manifest: &DatasetManifest) -> ValidationReport {
    let mut failures = Vec::new();
    let mut headers = Vec::with_capacity(manifest.entries.len());

    for entry in &manifest.entries {
        let path = manifest.feature_path(entry);
        match read_feature_header(&path) {
            Ok(h) => headers.push((entry, path, h)),
            Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                failures.push(ValidationFailure {
                    image_id: entry.image_id.clone(),
                    kind: FailureKind::MissingFeatureFile,
                    message: format!("feature file not found: {}", path.display()),
                    path,
                })
            }
            Err(e) => failures.push(ValidationFailure {
                image_id: entry.image_id.clone(),
                kind: FailureKind::BadFeatureFile,
                message: e.to_string(),
                path,
            }),
        }

        if let Some(mask) = manifest.mask_path(entry) {
            match read_pgm_header(&mask) {
                Ok((w, h))
                    if w == entry.image_width as usize && h == entry.image_height as usize => {}
                Ok((w, h)) => failures.push(ValidationFailure {
                    image_id: entry.image_id.clone(),
                    kind: FailureKind::BadMask,
                    message: format!(
                        "mask is {w}x{h}, image is {}x{}",
                        entry.image_width, entry.image_height
                    ),
                    path: mask,
                }),
                Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                    failures.push(ValidationFailure {
                        image_id: entry.image_id.clone(),
                        kind: FailureKind::MissingMask,
                        message: format!("mask file not found: {}", mask.display()),
                        path: mask,
                    })
                }
                Err(e) => failures.push(ValidationFailure {
                    image_id: entry.image_id.clone(),
                    kind: FailureKind::BadMask,
                    message: e.to_string(),
                    path: mask,
                }),
            }
        }
    }

    // Ties go to the smaller channel count so the choice is deterministic.
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, _, h) in &headers {
        *counts.entry(h.channels).or_default() += 1;
    }
    let majority = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| *c);
    if let Some(expected) = majority {
        for (entry, path, h) in headers {
            if h.channels != expected {
                failures.push(ValidationFailure {
                    image_id: entry.image_id.clone(),
                    kind: FailureKind::ChannelMismatch,
                    message: format!(
                        "channel mismatch: file has C={}, dataset majority is C={expected}",
                        h.channels
                    ),
                    path,
                });
            }
        }
    }

    ValidationReport {
        entries_checked: manifest.entries.len(),
        channels: majority,
        failures,
    }
}
