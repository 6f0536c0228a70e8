//! On-disk feature tensors, dataset manifests and ground-truth masks.

mod feature_map;
mod manifest;
mod pgm;
mod validate;

pub use feature_map::{
    encode_feature_map, read_feature_header, read_feature_map, read_feature_map_as,
    write_feature_map, FeatureHeader, FeatureMap, HEADER_LEN,
};
pub use manifest::{
    load_manifest, save_manifest, sha256_hex, BBox, DatasetManifest, ManifestEntry, Split,
    MANIFEST_VERSION,
};
pub use pgm::{read_pgm, read_pgm_header, write_pgm, GrayImage};
pub use validate::{validate_dataset, FailureKind, ValidationFailure, ValidationReport};
