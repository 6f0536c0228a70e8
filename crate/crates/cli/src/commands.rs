use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use reprloc_core::evalkit::{
    evaluate, evaluate_tau_sweep, ClassPredictions, EvalParams, Metric, PiouAggregation,
    MAXBOXACC_DELTAS,
};
use reprloc_core::featstore::{
    load_manifest, validate_dataset, write_feature_map, write_pgm, DatasetManifest, ManifestEntry,
    Split,
};
use reprloc_core::io::{file_stem_for, read_json, write_json_atomic};
use reprloc_core::localizer::export::{draw_box, raw_as_feature_map, scores_to_gray};
use reprloc_core::localizer::{
    activation_map, localize_activation, score_map, BoxPolicy, Connectivity, LocalizationResult,
    LocalizeParams,
};
use reprloc_core::representer::{
    accumulate_entries, finalize_tau, fit as fit_predictors, load_predictors, representer_topk,
    save_predictors, select_predictor, FitOptions, ForegroundPredictor, TauScope,
};
use reprloc_core::synth::{generate_synthetic, SynthSpec};
use reprloc_core::{Error, Result};
use reprloc_service::{ServiceConfig, ServiceState};

use crate::args::*;
use crate::Failure;

type CmdResult = std::result::Result<(), Failure>;

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn fit(a: FitArgs) -> CmdResult {
    let manifest = load_manifest(&a.manifest)?;
    let opts = FitOptions {
        classwise: a.classwise,
        sample_rate: a.sample_rate,
        seed: a.seed,
        constant_c: a.constant_c,
        tau_scope: if a.global_tau {
            TauScope::Global
        } else {
            TauScope::PerClass
        },
        tau_override: a.tau_override,
        compensated: a.compensated,
    };
    let predictors = fit_predictors(&manifest, &opts)?;
    save_predictors(&a.out, &predictors)?;
    for p in &predictors {
        let class = p.class_id.map_or("all".to_string(), |c| c.to_string());
        println!(
            "class {class}: tau={} images={} patches={} skipped_zero={}",
            p.tau,
            p.provenance.image_count,
            p.stats.as_ref().map_or(0, |s| s.patch_count),
            p.provenance.skipped_zero_vectors
        );
    }
    println!(
        "wrote {} predictor(s) to {}",
        predictors.len(),
        a.out.display()
    );
    Ok(())
}

fn split_entries(manifest: &DatasetManifest, split: SplitArg) -> Vec<&ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| match split {
            SplitArg::All => true,
            SplitArg::Train => e.split == Split::Train,
            SplitArg::Test => e.split == Split::Test,
        })
        .collect()
}

#[derive(Serialize)]
struct ThresholdRun {
    threshold: f64,
    results: Vec<LocalizationResult>,
}

#[derive(Serialize)]
struct InferOutput<'a> {
    manifest_digest: &'a str,
    connectivity: Connectivity,
    policy: BoxPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<Vec<LocalizationResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<Vec<ThresholdRun>>,
}

pub fn infer(a: InferArgs) -> CmdResult {
    let manifest = load_manifest(&a.manifest)?;
    let predictors = load_predictors(&a.predictor)?;
    let entries = split_entries(&manifest, a.split);
    if entries.is_empty() {
        return Err(Failure::Usage(
            format!("no {:?} entries in the manifest", a.split).to_lowercase(),
        ));
    }
    let sweep = a.threshold_sweep.as_ref().map(|g| g.values());
    let thresholds = sweep.clone().unwrap_or_else(|| vec![a.threshold]);
    create_dir(&a.out)?;
    let maps_dir = a.out.join("maps");
    let overlay_dir = a.out.join("overlays");
    if a.emit_maps {
        create_dir(&maps_dir)?;
    }
    if a.emit_overlays {
        create_dir(&overlay_dir)?;
    }

    // Per image: one result per threshold.
    let per_image: Vec<Vec<LocalizationResult>> = entries
        .par_iter()
        .map(|e| -> Result<Vec<LocalizationResult>> {
            let predictor = select_predictor(&predictors, e.class_id)?;
            let fm = manifest.load_feature_map(e)?;
            let act = activation_map(&fm, predictor)?;
            let results = thresholds
                .iter()
                .map(|&t| {
                    let params = LocalizeParams {
                        threshold: t,
                        connectivity: a.boxes.conn.into(),
                        policy: a.boxes.policy.into(),
                    };
                    localize_activation(&act, e.image_width, e.image_height, &params)
                })
                .collect::<Result<Vec<_>>>()?;
            if a.emit_maps || a.emit_overlays {
                let (w, h) = (e.image_width as usize, e.image_height as usize);
                let gray = scores_to_gray(&score_map(&act, e.image_width, e.image_height)?, w, h);
                let stem = file_stem_for(&e.image_id);
                if a.emit_maps {
                    write_pgm(&gray, &maps_dir.join(format!("{stem}.pgm")))?;
                    write_feature_map(
                        &raw_as_feature_map(&act)?,
                        &maps_dir.join(format!("{stem}.rpsf")),
                    )?;
                }
                if a.emit_overlays {
                    for r in &results {
                        let mut img = gray.clone();
                        if let Some(b) = &r.chosen_box {
                            draw_box(&mut img, b);
                        }
                        let name = if sweep.is_some() {
                            format!("{stem}_theta{:.3}.pgm", r.threshold)
                        } else {
                            format!("{stem}.pgm")
                        };
                        write_pgm(&img, &overlay_dir.join(name))?;
                    }
                }
            }
            Ok(results)
        })
        .collect::<Result<_>>()?;

    let localized = per_image
        .iter()
        .filter(|r| r[0].chosen_box.is_some())
        .count();
    let mut out = InferOutput {
        manifest_digest: &manifest.digest,
        connectivity: a.boxes.conn.into(),
        policy: a.boxes.policy.into(),
        threshold: None,
        results: None,
        runs: None,
    };
    if sweep.is_some() {
        out.runs = Some(
            thresholds
                .iter()
                .enumerate()
                .map(|(i, &t)| ThresholdRun {
                    threshold: t,
                    results: per_image.iter().map(|r| r[i].clone()).collect(),
                })
                .collect(),
        );
    } else {
        out.threshold = Some(a.threshold);
        out.results = Some(per_image.into_iter().map(|mut r| r.remove(0)).collect());
    }
    let path = a.out.join("results.json");
    write_json_atomic(&path, &out)?;
    println!(
        "localized {localized}/{} images at threshold {}; wrote {}",
        entries.len(),
        thresholds[0],
        path.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let metric: Metric = a.metric.into();
    if matches!(metric, Metric::Top1 | Metric::Top5) && a.predictions.is_none() {
        return Err(Failure::Usage(format!(
            "--metric {metric} requires --predictions"
        )));
    }
    let manifest = load_manifest(&a.manifest)?;
    let predictors = load_predictors(&a.predictor)?;
    let predictions = a
        .predictions
        .as_deref()
        .map(ClassPredictions::load)
        .transpose()?;
    let params = EvalParams {
        delta: a.delta,
        theta_grid: a.theta_grid,
        localize: LocalizeParams {
            threshold: a.threshold,
            connectivity: a.boxes.conn.into(),
            policy: a.boxes.policy.into(),
        },
        maxbox_deltas: MAXBOXACC_DELTAS.to_vec(),
        piou_aggregation: match a.piou_aggregation {
            AggregationArg::Global => PiouAggregation::Global,
            AggregationArg::PerImage => PiouAggregation::PerImageMean,
        },
    };
    let report = match a.tau_sweep {
        Some(grid) => evaluate_tau_sweep(
            &manifest,
            &predictors,
            metric,
            &params,
            predictions.as_ref(),
            grid,
        )?,
        None => evaluate(
            &manifest,
            &predictors,
            metric,
            &params,
            predictions.as_ref(),
        )?,
    };
    write_json_atomic(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        report.write_per_image_csv(csv)?;
    }
    println!(
        "{metric} = {} over {} images",
        report.value, report.image_count
    );
    if let Some(s) = &report.tau_sweep {
        println!("tau sweep: best {} at tau = {}", s.best_value, s.best_tau);
    }
    Ok(())
}

pub fn explain(a: ExplainArgs) -> CmdResult {
    if a.topk == 0 {
        return Err(Failure::Usage("--topk must be at least 1".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let entry = manifest.entry(&a.image)?;
    let query = manifest.load_feature_map(entry)?;
    let train: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();

    let (tau, constant_c, training) = match &a.predictor {
        Some(path) => {
            let predictors: Vec<ForegroundPredictor> = load_predictors(path)?;
            let p = select_predictor(&predictors, entry.class_id)?;
            let training: Vec<&ManifestEntry> = train
                .into_iter()
                .filter(|e| p.class_id.is_none() || e.class_id == p.class_id)
                .collect();
            (p.tau, p.constant_c, training)
        }
        None => {
            let acc = accumulate_entries(&manifest, &train, false)?;
            (finalize_tau(&acc)?, a.constant_c, train)
        }
    };
    let (row, col) = a.patch;
    let result = representer_topk(
        &manifest,
        &training,
        tau,
        constant_c,
        &query,
        row,
        col,
        a.topk,
        a.polarity.into(),
    )?;
    write_json_atomic(&a.out, &result)?;
    println!(
        "patch ({row},{col}) of {}: activation {} from {} training patches (tau {tau})",
        a.image, result.total, result.patches_scanned
    );
    for e in result.excitatory.iter().take(3) {
        println!(
            "  + {} ({},{}) {}",
            e.image_id, e.row, e.col, e.representer_value
        );
    }
    for e in result.inhibitory.iter().take(3) {
        println!(
            "  - {} ({},{}) {}",
            e.image_id, e.row, e.col, e.representer_value
        );
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec: SynthSpec = read_json(&a.spec)?;
    create_dir(&a.out)?;
    let manifest = generate_synthetic(&spec, &a.out)?;
    println!(
        "generated {} images ({} test) in {}",
        manifest.entries.len(),
        manifest.split(Split::Test).count(),
        a.out.display()
    );
    Ok(())
}

pub fn validate(a: ValidateArgs) -> CmdResult {
    let manifest = load_manifest(&a.manifest)?;
    let report = validate_dataset(&manifest);
    if let Some(out) = &a.out {
        write_json_atomic(out, &report)?;
    }
    for f in &report.failures {
        eprintln!("{}: {}", f.image_id, f.message);
    }
    println!(
        "checked {} entries, C = {}, {} failure(s)",
        report.entries_checked,
        report.channels.map_or("?".to_string(), |c| c.to_string()),
        report.failures.len()
    );
    if report.is_ok() {
        Ok(())
    } else {
        Err(Failure::Report(format!(
            "{} entries failed validation",
            report.failures.len()
        )))
    }
}

pub fn serve(a: ServeArgs) -> CmdResult {
    if a.max_k == 0 {
        return Err(Failure::Usage("--max-k must be at least 1".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let predictors = load_predictors(&a.predictor)?;
    let config = ServiceConfig {
        max_k: a.max_k,
        allowed_origin: a.cors_origin,
    };
    let state = std::sync::Arc::new(ServiceState::build(&manifest, predictors, config)?);
    let addr = std::net::SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io {
            path: "tokio runtime".into(),
            source: e,
        })?;
    println!("serving {} images on http://{addr}", manifest.entries.len());
    runtime
        .block_on(reprloc_service::serve(state, addr))
        .map_err(|e| Error::Io {
            path: addr.to_string().into(),
            source: e,
        })?;
    Ok(())
}
