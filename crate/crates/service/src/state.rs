use std::collections::BTreeMap;

use serde::Serialize;

use reprloc_core::featstore::{BBox, DatasetManifest, FeatureMap, ManifestEntry, Split};
use reprloc_core::localizer::{
    activation_map, localize_activation, ActivationMap, BoxPolicy, Connectivity,
    LocalizationResult, LocalizeParams,
};
use reprloc_core::representer::{
    importance_map, select_predictor, ForegroundPredictor, ImportanceMap, Polarity, Provenance,
    RepresenterIndex, RepresenterResult, TrainingImage,
};
use reprloc_core::{Error, Result};

pub const DEFAULT_MAX_K: usize = 256;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest `k` a representer query may ask for.
    pub max_k: usize,
    /// Allowed CORS origin; `None` allows any origin.
    pub allowed_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_k: DEFAULT_MAX_K,
            allowed_origin: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageInfo {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub grid_height: usize,
    pub grid_width: usize,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<Vec<BBox>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictorInfo {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    pub dim: usize,
    pub tau: f64,
    #[serde(rename = "constant_C")]
    pub constant_c: f64,
    pub training_images: usize,
    pub training_patches: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub manifest_digest: String,
    pub image_count: usize,
    pub max_k: usize,
    pub predictors: Vec<PredictorInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeResponse {
    #[serde(flatten)]
    pub result: LocalizationResult,
    pub connectivity: Connectivity,
    pub policy: BoxPolicy,
    pub grid_height: usize,
    pub grid_width: usize,
    /// Min-max normalized activations at feature resolution, row-major.
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresenterResponse {
    #[serde(flatten)]
    pub result: RepresenterResult,
    /// `wᵀ f̂` at the queried patch; equals the sum of all representer values.
    pub activation: f64,
}

struct ImageState {
    entry: ManifestEntry,
    features: FeatureMap,
    predictor: usize,
    activation: ActivationMap,
    importance: ImportanceMap,
}

pub struct ServiceState {
    config: ServiceConfig,
    digest: String,
    predictors: Vec<ForegroundPredictor>,
    indexes: Vec<RepresenterIndex>,
    images: BTreeMap<String, ImageState>,
    order: Vec<String>,
}

impl ServiceState {
    /// Loads every feature map, precomputes activation and α maps, and indexes
    /// each predictor's training patches.
    pub fn build(
        manifest: &DatasetManifest,
        predictors: Vec<ForegroundPredictor>,
        config: ServiceConfig,
    ) -> Result<Self> {
        if predictors.is_empty() {
            return Err(Error::NoPredictor(None));
        }
        if config.max_k == 0 {
            return Err(Error::InvalidParameter {
                name: "max_k",
                reason: "must be at least 1".into(),
            });
        }
        let mut images = BTreeMap::new();
        let mut order = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let features = manifest.load_feature_map(entry)?;
            let chosen = select_predictor(&predictors, entry.class_id)?;
            let predictor = predictors
                .iter()
                .position(|p| std::ptr::eq(p, chosen))
                .expect("selected from the same slice");
            let activation = activation_map(&features, chosen)?;
            let importance = importance_map(&features, chosen.tau, chosen.constant_c)?;
            order.push(entry.image_id.clone());
            images.insert(
                entry.image_id.clone(),
                ImageState {
                    entry: entry.clone(),
                    features,
                    predictor,
                    activation,
                    importance,
                },
            );
        }

        // Each predictor explains with the training images it was fitted on.
        let indexes = predictors
            .iter()
            .map(|p| {
                let training: Vec<TrainingImage> = order
                    .iter()
                    .map(|id| &images[id])
                    .filter(|s| s.entry.split == Split::Train)
                    .filter(|s| p.class_id.is_none() || s.entry.class_id == p.class_id)
                    .map(|s| TrainingImage::from_map(&s.features))
                    .collect();
                RepresenterIndex::new(training, p.tau, p.constant_c)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ServiceState {
            config,
            digest: manifest.digest.clone(),
            predictors,
            indexes,
            images,
            order,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn image(&self, id: &str) -> Result<&ImageState> {
        self.images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn images(&self) -> Vec<ImageInfo> {
        self.order
            .iter()
            .map(|id| {
                let s = &self.images[id];
                ImageInfo {
                    image_id: id.clone(),
                    image_width: s.entry.image_width,
                    image_height: s.entry.image_height,
                    grid_height: s.features.height(),
                    grid_width: s.features.width(),
                    split: s.entry.split,
                    class_id: s.entry.class_id,
                    gt_boxes: s.entry.gt_boxes.clone(),
                }
            })
            .collect()
    }

    pub fn meta(&self) -> Meta {
        Meta {
            manifest_digest: self.digest.clone(),
            image_count: self.order.len(),
            max_k: self.config.max_k,
            predictors: self
                .predictors
                .iter()
                .zip(&self.indexes)
                .map(|(p, idx)| PredictorInfo {
                    class_id: p.class_id,
                    dim: p.dim,
                    tau: p.tau,
                    constant_c: p.constant_c,
                    training_images: idx.images().len(),
                    training_patches: idx.patch_count(),
                    provenance: p.provenance.clone(),
                })
                .collect(),
        }
    }

    pub fn activation(&self, id: &str) -> Result<&ActivationMap> {
        Ok(&self.image(id)?.activation)
    }

    pub fn importance(&self, id: &str) -> Result<&ImportanceMap> {
        Ok(&self.image(id)?.importance)
    }

    pub fn localize(&self, id: &str, params: &LocalizeParams) -> Result<LocalizeResponse> {
        let s = self.image(id)?;
        let result = localize_activation(
            &s.activation,
            s.entry.image_width,
            s.entry.image_height,
            params,
        )?;
        Ok(LocalizeResponse {
            result,
            connectivity: params.connectivity,
            policy: params.policy,
            grid_height: s.activation.height,
            grid_width: s.activation.width,
            normalized: s.activation.normalized.clone(),
        })
    }

    pub fn representer(
        &self,
        id: &str,
        row: usize,
        col: usize,
        k: usize,
        polarity: Polarity,
    ) -> Result<RepresenterResponse> {
        let s = self.image(id)?;
        if k > self.config.max_k {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("must not exceed {}, got {k}", self.config.max_k),
            });
        }
        let result = self.indexes[s.predictor].query(&s.features, row, col, k, polarity)?;
        let activation = s.activation.raw[row * s.activation.width + col];
        Ok(RepresenterResponse { result, activation })
    }
}
