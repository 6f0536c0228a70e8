//! Localization metrics: IoU, GT-Known, Top-1/5 Loc, MaxBoxAccV2, PxAP and PIoU.

mod boxes;
mod evaluate;
mod pixels;

pub use boxes::{
    best_iou, best_iou_table, gt_known_loc, iou, join_results, max_box_acc_v2, top_k_loc,
    BoxSample, ClassPredictions, DeltaAccuracy, ImageScore, LocScore, MaxBoxAccReport,
    ScoreMapSample, MAXBOXACC_DELTAS,
};
pub use evaluate::{
    evaluate, evaluate_tau_sweep, EvalParams, EvalReport, LinearGrid, Metric, TauPoint, TauSweep,
};
pub use pixels::{piou, pxap, PiouAggregation, PiouReport, PixelSample};
