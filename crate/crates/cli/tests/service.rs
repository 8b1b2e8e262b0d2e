mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{run, Fixture};
use hmt_cli::commands::PredictionRow;
use hmt_cli::service::{router, AppState};
use hmt_cli::wire::{PredictResponse, TaxonomyPayload};
use hmt_core::corpus::read_records;
use hmt_core::{HmtModel, Taxonomy};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn load(f: &Fixture) -> HmtModel {
    let taxonomy = Taxonomy::load(f.path("data/taxonomy.json")).unwrap();
    HmtModel::load(f.path("model.ckpt"), &taxonomy).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn predict(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, "POST", "/predict", Some(body.to_string())).await
}

fn docs() -> Value {
    json!([{"type": "title", "text": "w001 w017 w033"}, {"type": "abstract", "text": "w005 w040 w002 w019"}])
}

#[tokio::test]
async fn health_reports_the_checkpoint_digest() {
    let f = Fixture::trained(20, 0);
    let model = load(&f);
    let digest = model.digest();
    let app = router(AppState::new(model));
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "model_fingerprint": digest}));
}

#[tokio::test]
async fn no_model_means_unavailable() {
    let f = Fixture::data(21);
    let taxonomy = Taxonomy::load(f.path("data/taxonomy.json")).unwrap();
    let app = router(AppState::without_model(&taxonomy));
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(predict(&app, json!({"documents": docs()})).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/taxonomy", None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn taxonomy_lists_every_label() {
    let f = Fixture::trained(22, 0);
    let model = load(&f);
    let taxonomy = model.taxonomy().clone();
    let app = router(AppState::new(model));
    let (status, body) = call(&app, "GET", "/taxonomy", None).await;
    assert_eq!(status, StatusCode::OK);
    let payload: TaxonomyPayload = serde_json::from_value(body).unwrap();
    assert_eq!(payload.nodes.len(), taxonomy.num_nodes() - 1);
    assert_eq!(payload.fingerprint, taxonomy.fingerprint());
    assert_eq!(payload.roots, ["A", "B", "C"]);
    let listed_children: usize = payload.nodes.iter().map(|n| n.children.len()).sum::<usize>() + payload.roots.len();
    assert_eq!(listed_children, payload.nodes.len());
    for n in &payload.nodes {
        let id = taxonomy.by_code(&n.code).unwrap();
        assert_eq!(taxonomy.level_of(id), n.level);
        for c in &n.children {
            let child = payload.nodes.iter().find(|m| &m.code == c).unwrap();
            assert_eq!(child.parent.as_deref(), Some(n.code.as_str()));
        }
    }
}

#[tokio::test]
async fn full_prefix_is_echoed_with_score_one() {
    let f = Fixture::trained(23, 1);
    let app = router(AppState::new(load(&f)));
    let (status, body) = predict(&app, json!({"documents": docs(), "expert_prefix": ["B", "B02", "B0201"]})).await;
    assert_eq!(status, StatusCode::OK);
    let r: PredictResponse = serde_json::from_value(body).unwrap();
    let codes: Vec<&str> = r.path.iter().map(|s| s.code.as_str()).collect();
    assert_eq!(codes, ["B", "B02", "B0201"]);
    assert!(r.path.iter().all(|s| s.prob == 1.0 && s.alternatives.is_empty()));
    assert_eq!(r.score, 1.0);
    assert!(!r.terminated);
    assert!(r.valid_path);
}

#[tokio::test]
async fn malformed_bodies_are_rejected_with_the_field() {
    let f = Fixture::trained(24, 0);
    let app = router(AppState::new(load(&f)));

    let (status, body) = call(&app, "POST", "/predict", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());

    let (status, body) = predict(&app, json!({"expert_prefix": []})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("documents"), "{body}");

    let (status, body) = predict(&app, json!({"documents": [{"type": 3, "text": "x"}]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "documents[0].type");

    let (status, body) = predict(&app, json!({"documents": docs(), "mode": "beam"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "mode");

    let (status, body) = predict(&app, json!({"documents": []})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "documents");

    let (status, body) = predict(&app, json!({"documents": [{"type": "poem", "text": "x"}]})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("poem"));
}

#[tokio::test]
async fn invalid_prefixes_are_unprocessable() {
    let f = Fixture::trained(25, 0);
    let app = router(AppState::new(load(&f)));
    for prefix in [json!(["Z"]), json!(["A", "B01"]), json!(["A01"]), json!(["A", "A01", "A0101", "A0102"])] {
        let (status, body) = predict(&app, json!({"documents": docs(), "expert_prefix": prefix})).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{prefix}: {body}");
        assert_eq!(body["field"], "expert_prefix");
    }
}

#[tokio::test]
async fn service_matches_cli_predictions() {
    let f = Fixture::trained(26, 2);
    let app = router(AppState::new(load(&f)));
    for (prefix, mode) in [(vec![], "greedy"), (vec!["C"], "constrained"), (vec!["A", "A02"], "greedy")] {
        let prefix_arg = prefix.join(",");
        let (data, ckpt, input) = (f.s("data"), f.s("model.ckpt"), f.s("data/test.jsonl"));
        let mut args = vec!["predict", "--data", &data, "--checkpoint", &ckpt];
        args.extend(["--input", input.as_str(), "--mode", mode, "--top-k", "3"]);
        if !prefix.is_empty() {
            args.extend(["--prefix", prefix_arg.as_str()]);
        }
        let cli = run(&args).unwrap();
        let records = read_records(f.path("data/test.jsonl")).unwrap();
        for (line, record) in cli.lines().zip(&records) {
            let row: PredictionRow = serde_json::from_str(line).unwrap();
            let body = json!({"documents": record.documents, "expert_prefix": prefix, "mode": mode, "top_k": 3});
            let (status, resp) = predict(&app, body).await;
            assert_eq!(status, StatusCode::OK);
            let resp: PredictResponse = serde_json::from_value(resp).unwrap();
            assert_eq!(resp, row.response, "record {}", record.id);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_are_independent() {
    let f = Fixture::trained(27, 1);
    let app = router(AppState::new(load(&f)));
    let records = read_records(f.path("data/test.jsonl")).unwrap();
    let bodies: Vec<Value> = records.iter().map(|r| json!({"documents": r.documents})).collect();
    let mut sequential = Vec::new();
    for b in &bodies {
        sequential.push(predict(&app, b.clone()).await.1);
    }
    let handles: Vec<_> = bodies
        .iter()
        .rev()
        .cloned()
        .map(|b| {
            let app = app.clone();
            tokio::spawn(async move { predict(&app, b).await.1 })
        })
        .collect();
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(h.await.unwrap());
    }
    concurrent.reverse();
    assert_eq!(sequential, concurrent);
}
