use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use reprloc_core::featstore::{
    save_manifest, write_feature_map, BBox, DatasetManifest, FeatureMap, ManifestEntry, Split,
};
use reprloc_core::localizer::{localize, BoxPolicy, Connectivity, LocalizeParams};
use reprloc_core::representer::{fit, representer_topk, FitOptions, ForegroundPredictor, Polarity};
use reprloc_core::synth::{generate_synthetic, SynthSpec};
use reprloc_service::{router, ServiceConfig, ServiceState};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    predictors: Vec<ForegroundPredictor>,
    app: axum::Router,
}

fn synthetic() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&SynthSpec::separable(10, 42), dir.path()).unwrap();
    let predictors = fit(&manifest, &FitOptions::default()).unwrap();
    let state =
        ServiceState::build(&manifest, predictors.clone(), ServiceConfig::default()).unwrap();
    Fixture {
        _dir: dir,
        manifest,
        predictors,
        app: router(Arc::new(state)),
    }
}

/// Two training patches (2,0) and (0,1), a test patch (1,0) and a constant map.
fn toy() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let maps = [
        FeatureMap::from_patches("a", 1, 1, &[vec![2.0, 0.0]]).unwrap(),
        FeatureMap::from_patches("b", 1, 1, &[vec![0.0, 1.0]]).unwrap(),
        FeatureMap::from_patches("t", 1, 1, &[vec![1.0, 0.0]]).unwrap(),
        FeatureMap::from_patches("flat", 2, 2, &vec![vec![1.0, 1.0]; 4]).unwrap(),
    ];
    let mut entries = Vec::new();
    for (m, split) in maps
        .iter()
        .zip([Split::Train, Split::Train, Split::Test, Split::Test])
    {
        let rel = format!("{}.rpsf", m.image_id);
        write_feature_map(m, &root.join(&rel)).unwrap();
        entries.push(ManifestEntry {
            image_id: m.image_id.clone(),
            feature_path: rel.into(),
            image_width: 8,
            image_height: 8,
            class_id: None,
            gt_boxes: Some(vec![BBox::new(0, 0, 4, 4)]),
            gt_mask_path: None,
            split,
        });
    }
    let manifest = save_manifest(
        &root.join("manifest.json"),
        root,
        &entries,
        &BTreeMap::new(),
    )
    .unwrap();
    let predictors = fit(&manifest, &FitOptions::default()).unwrap();
    let state =
        ServiceState::build(&manifest, predictors.clone(), ServiceConfig::default()).unwrap();
    Fixture {
        _dir: dir,
        manifest,
        predictors,
        app: router(Arc::new(state)),
    }
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

async fn get_json(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = get(app, uri).await;
    (status, serde_json::from_slice(&body).unwrap())
}

#[tokio::test]
async fn images_and_meta() {
    let f = synthetic();
    let (status, v) = get_json(&f.app, "/v1/images").await;
    assert_eq!(status, StatusCode::OK);
    let images = v["images"].as_array().unwrap();
    assert_eq!(images.len(), 10);
    assert_eq!(images[0]["image_id"], "img_00000");
    assert_eq!(images[0]["grid_width"], 8);
    assert_eq!(images[0]["image_width"], 64);

    let (status, v) = get_json(&f.app, "/v1/meta").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["manifest_digest"], f.manifest.digest.as_str());
    assert_eq!(
        v["predictors"][0]["tau"].as_f64().unwrap(),
        f.predictors[0].tau
    );
    assert_eq!(v["max_k"], 256);
}

#[tokio::test]
async fn localize_matches_library() {
    let f = synthetic();
    for entry in f.manifest.split(Split::Test) {
        let fm = f.manifest.load_feature_map(entry).unwrap();
        for (theta, conn, policy) in [
            (0.3, Connectivity::Four, BoxPolicy::Largest),
            (0.5, Connectivity::Eight, BoxPolicy::All),
            (0.8, Connectivity::Four, BoxPolicy::All),
        ] {
            let params = LocalizeParams {
                threshold: theta,
                connectivity: conn,
                policy,
            };
            let expected = localize(
                &fm,
                &f.predictors[0],
                entry.image_width,
                entry.image_height,
                &params,
            )
            .unwrap();
            let policy_name = if policy == BoxPolicy::All {
                "all"
            } else {
                "largest"
            };
            let conn_name = if conn == Connectivity::Eight {
                "8"
            } else {
                "4"
            };
            let uri = format!(
                "/v1/localize/{}?theta={theta}&conn={conn_name}&policy={policy_name}",
                entry.image_id
            );
            let (status, v) = get_json(&f.app, &uri).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(v["boxes"], serde_json::to_value(&expected.boxes).unwrap());
            assert_eq!(
                v["chosen_box"],
                serde_json::to_value(expected.chosen_box).unwrap()
            );
            assert_eq!(v["degenerate"], false);
            assert_eq!(v["normalized"].as_array().unwrap().len(), 64);
        }
    }
}

#[tokio::test]
async fn activation_and_importance_payloads() {
    let f = synthetic();
    let entry = &f.manifest.entries[7];
    let fm = f.manifest.load_feature_map(entry).unwrap();
    let act = reprloc_core::localizer::activation_map(&fm, &f.predictors[0]).unwrap();
    let (status, v) = get_json(&f.app, &format!("/v1/activation/{}", entry.image_id)).await;
    assert_eq!(status, StatusCode::OK);
    let got: Vec<f64> = serde_json::from_value(v["normalized"].clone()).unwrap();
    assert_eq!(got, act.normalized);

    let imp = reprloc_core::representer::importance_map(&fm, f.predictors[0].tau, 1.0).unwrap();
    let (status, v) = get_json(&f.app, &format!("/v1/importance/{}", entry.image_id)).await;
    assert_eq!(status, StatusCode::OK);
    let got: Vec<f64> = serde_json::from_value(v["alpha"].clone()).unwrap();
    assert_eq!(got, imp.alpha);
}

#[tokio::test]
async fn representer_matches_streaming_query() {
    let f = synthetic();
    let train: Vec<_> = f.manifest.split(Split::Train).collect();
    let entry = f.manifest.split(Split::Test).next().unwrap();
    let fm = f.manifest.load_feature_map(entry).unwrap();
    let expected = representer_topk(
        &f.manifest,
        &train,
        f.predictors[0].tau,
        1.0,
        &fm,
        2,
        5,
        5,
        Polarity::Both,
    )
    .unwrap();
    let uri = format!(
        "/v1/representer/{}?row=2&col=5&k=5&polarity=both",
        entry.image_id
    );
    let (status, v) = get_json(&f.app, &uri).await;
    assert_eq!(status, StatusCode::OK);
    let excit: Vec<reprloc_core::representer::RepresenterEntry> =
        serde_json::from_value(v["excitatory"].clone()).unwrap();
    assert_eq!(excit, expected.excitatory);
    assert_eq!(v["total"].as_f64().unwrap(), expected.total);
    let activation = v["activation"].as_f64().unwrap();
    assert!((activation - expected.total).abs() <= 1e-9 * activation.abs().max(1.0));
}

#[tokio::test]
async fn toy_representer_values() {
    let f = toy();
    let (status, v) = get_json(
        &f.app,
        "/v1/representer/t?row=0&col=0&k=1&polarity=excitatory",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let top = &v["excitatory"][0];
    assert_eq!(top["image_id"], "a");
    assert!((top["representer_value"].as_f64().unwrap() - 0.41886).abs() < 1e-5);

    // Saturation: k beyond the training patch count returns everything, sorted.
    let (_, v) = get_json(&f.app, "/v1/representer/t?row=0&col=0&k=256&polarity=both").await;
    let ex = v["excitatory"].as_array().unwrap();
    let inh = v["inhibitory"].as_array().unwrap();
    assert_eq!(ex.len() + inh.len(), 2);
    let ids: Vec<&str> = ex
        .iter()
        .chain(inh)
        .map(|e| e["image_id"].as_str().unwrap())
        .collect();
    assert!(ids.contains(&"a") && ids.contains(&"b"));
}

#[tokio::test]
async fn degenerate_map_gives_empty_boxes() {
    let f = toy();
    let (status, v) = get_json(&f.app, "/v1/localize/flat?theta=0.5").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["degenerate"], true);
    assert_eq!(v["boxes"].as_array().unwrap().len(), 0);
    assert!(v["chosen_box"].is_null());
}

#[tokio::test]
async fn error_statuses() {
    let f = synthetic();
    let (status, v) = get_json(&f.app, "/v1/localize/img_00009?theta=1.01").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "theta");
    assert!(v["error"].as_str().unwrap().contains("1.01"));

    let (status, v) = get_json(&f.app, "/v1/localize/img_00009?conn=6").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "conn");

    let (status, _) = get_json(&f.app, "/v1/localize/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get_json(&f.app, "/v1/representer/nope?row=0&col=0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = get_json(&f.app, "/v1/representer/img_00009?row=8&col=0").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains('8'));

    let (status, v) = get_json(&f.app, "/v1/representer/img_00009?row=0").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "col");

    let (status, v) = get_json(&f.app, "/v1/representer/img_00009?row=0&col=0&k=257").await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(v["field"], "k");

    let (status, _) = get_json(&f.app, "/v1/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let f = synthetic();
    for uri in [
        "/v1/localize/img_00006?theta=0.4&policy=all",
        "/v1/representer/img_00006?row=1&col=1&k=9",
        "/v1/meta",
    ] {
        let (_, a) = get(&f.app, uri).await;
        let (_, b) = get(&f.app, uri).await;
        assert_eq!(a, b);
    }
}

#[tokio::test]
async fn cors_header_present() {
    let f = synthetic();
    let resp = f
        .app
        .clone()
        .oneshot(
            Request::get("/v1/meta")
                .header("origin", "http://localhost:5173")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
