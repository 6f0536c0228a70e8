//! Closed-form foreground predictor from dataset statistics, and its
//! decomposition into per-training-patch representer values.

mod accumulator;
mod explain;
mod fit;
mod importance;
mod predictor;

pub use accumulator::{l2_norm, normalize_feature, Accumulator};
pub use explain::{
    representer_topk, PatchQuery, Polarity, RepresenterEntry, RepresenterIndex, RepresenterResult,
    TrainingImage,
};
pub use fit::{accumulate_entries, fit, sample_training_set, FitOptions, Stratum, CHUNK_IMAGES};
pub use importance::{alpha, importance_map, ImportanceMap};
pub use predictor::{
    finalize_predictor, finalize_tau, load_predictors, save_predictors, select_predictor,
    tau_gram_oracle, ForegroundPredictor, PredictorStats, Provenance, TauScope, PREDICTOR_VERSION,
};
