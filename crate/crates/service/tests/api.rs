use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use wordart_core::pipeline::{JobConfig, ServicesConfig, ThresholdPolicy};
use wordart_core::semtypo::OptimizationConfig;
use wordart_service::{router, AppState, JobEvent, ServerConfig};

const FONT: &[u8] = include_bytes!("../../core/testdata/WordartTestSans.ttf");

fn app(runs_dir: Option<std::path::PathBuf>) -> Router {
    let job_defaults = JobConfig {
        seeds_per_attempt: 2,
        threshold: ThresholdPolicy::Fixed {
            value: f64::NEG_INFINITY,
        },
        optimization: OptimizationConfig {
            iterations: 30,
            canvas_px: 64,
            crop_count: 2,
            crop_px: 48,
            frame_stride: 5,
            ..OptimizationConfig::default()
        },
        ..JobConfig::default()
    };
    router(AppState::new(ServerConfig {
        font: Arc::new(FONT.to_vec()),
        services: ServicesConfig::default(),
        runs_dir,
        static_dir: None,
        job_defaults,
    }))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn submit(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/api/jobs", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    v["job_id"].as_str().unwrap().to_string()
}

fn cat_job() -> Value {
    serde_json::json!({"text": "S", "concept": "cat", "domain": "jewelry", "seed": 7})
}

/// Parses `data:` payloads out of SSE text; returns complete events and
/// the unconsumed tail.
fn parse_sse(buf: &str) -> (Vec<JobEvent>, String) {
    let mut out = Vec::new();
    let mut rest = buf;
    while let Some(end) = rest.find("\n\n") {
        let block = &rest[..end];
        for line in block.lines() {
            if let Some(data) = line.strip_prefix("data:") {
                out.push(serde_json::from_str(data.trim_start()).unwrap());
            }
        }
        rest = &rest[end + 2..];
    }
    (out, rest.to_string())
}

async fn open_stream(app: &Router, id: &str, from: u64) -> Body {
    let req = Request::get(format!("/api/jobs/{id}/events?from={from}"))
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    resp.into_body()
}

/// Reads events until the stream ends or `limit` events arrived.
async fn read_events(mut body: Body, limit: usize) -> Vec<JobEvent> {
    let mut buf = String::new();
    let mut events = Vec::new();
    while events.len() < limit {
        let Some(frame) = body.frame().await else { break };
        if let Ok(data) = frame.unwrap().into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
            let (mut parsed, rest) = parse_sse(&buf);
            events.append(&mut parsed);
            buf = rest;
        }
    }
    events.truncate(limit);
    events
}

async fn all_events(app: &Router, id: &str, from: u64) -> Vec<JobEvent> {
    read_events(open_stream(app, id, from).await, usize::MAX).await
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn submit_runs_to_done_with_frames() {
    let app = app(None);
    let id = submit(&app, cat_job()).await;
    let events = all_events(&app, &id, 0).await;
    let seqs: Vec<u64> = events.iter().map(|e| e.sequence).collect();
    assert_eq!(seqs, (0..events.len() as u64).collect::<Vec<_>>());
    assert!(events.iter().any(|e| e.kind.as_str() == "frame"));
    let last = events.last().unwrap();
    assert_eq!(last.kind.as_str(), "terminal");
    assert_eq!(last.payload["state"], "Done");

    let (status, job) = call(&app, "GET", &format!("/api/jobs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(job["state"], "Done");
    assert_eq!(job["events"], events.len() as u64);

    let (_, cands) = call(&app, "GET", &format!("/api/jobs/{id}/candidates"), None).await;
    let list = cands["candidates"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    let scores: Vec<f64> = list.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores[0] >= scores[1]);
    let url = list[0]["images"]["textured"].as_str().unwrap();
    let resp = app
        .clone()
        .oneshot(Request::get(url).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn resumed_streams_replay_the_suffix_exactly_once() {
    let app = app(None);
    let id = submit(&app, cat_job()).await;
    let full = all_events(&app, &id, 0).await;
    for k in [0, 1, full.len() as u64 / 2, full.len() as u64 - 1, full.len() as u64] {
        assert_eq!(all_events(&app, &id, k).await, full[k as usize..], "from {k}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reconnecting_mid_run_has_no_gaps() {
    let app = app(None);
    let id = submit(&app, cat_job()).await;
    let mut seen = Vec::new();
    let mut cursor = 0;
    loop {
        let chunk = read_events(open_stream(&app, &id, cursor).await, 7).await;
        let done = chunk.len() < 7 || chunk.last().is_some_and(|e| e.kind.as_str() == "terminal");
        cursor += chunk.len() as u64;
        seen.extend(chunk);
        if done {
            break;
        }
    }
    assert_eq!(seen, all_events(&app, &id, 0).await);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn status_snapshots_are_consistent_while_running() {
    let app = app(None);
    let id = submit(&app, cat_job()).await;
    let mut last_events = 0;
    loop {
        let (status, job) = call(&app, "GET", &format!("/api/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let n = job["events"].as_u64().unwrap();
        assert!(n >= last_events);
        last_events = n;
        let (_, cands) = call(&app, "GET", &format!("/api/jobs/{id}/candidates"), None).await;
        assert!(cands["candidates"].is_array());
        if job["state"] == "Done" || job["state"] == "Failed" {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn select_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let app = app(Some(tmp.to_path_buf()));
    let id = submit(&app, cat_job()).await;
    all_events(&app, &id, 0).await;

    let (status, _) = call(
        &app,
        "POST",
        &format!("/api/jobs/{id}/select"),
        Some(serde_json::json!({"candidate_id": "nope"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/api/jobs/job-999999/select",
        Some(serde_json::json!({"candidate_id": "a1-c0-s0"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, ack) = call(
        &app,
        "POST",
        &format!("/api/jobs/{id}/select"),
        Some(serde_json::json!({"candidate_id": "a1-c0-s1"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["accepted"], "a1-c0-s1");
    let (_, job) = call(&app, "GET", &format!("/api/jobs/{id}"), None).await;
    assert_eq!(job["accepted"], "a1-c0-s1");
    let manifest: Value = serde_json::from_slice(&std::fs::read(tmp.join(&id).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["accepted"], "a1-c0-s1");

    let (status, v) = call(
        &app,
        "POST",
        &format!("/api/jobs/{id}/rerun"),
        Some(serde_json::json!({"seed": 8})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let child = v["job_id"].as_str().unwrap().to_string();
    assert_ne!(child, id);
    let events = all_events(&app, &child, 0).await;
    assert_eq!(events.last().unwrap().payload["state"], "Done");
    let (_, job) = call(&app, "GET", &format!("/api/jobs/{child}"), None).await;
    assert_eq!(job["parent"], id.as_str());
    let (_, a) = call(&app, "GET", &format!("/api/jobs/{id}/candidates"), None).await;
    let (_, b) = call(&app, "GET", &format!("/api/jobs/{child}/candidates"), None).await;
    assert_ne!(a["candidates"][0]["images"], b["candidates"][0]["images"]);
}

#[tokio::test]
async fn rejects_bad_bodies_and_unknown_jobs() {
    let app = app(None);
    for body in [
        serde_json::json!({"text": "S"}),
        serde_json::json!({"concept": "cat"}),
        serde_json::json!({"text": "S", "concept": "cat", "colour": "red"}),
        serde_json::json!({"text": "S", "concept": "cat", "k": 0}),
        serde_json::json!([1, 2]),
    ] {
        let (status, v) = call(&app, "POST", "/api/jobs", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["code"], "invalid_body");
    }
    let req = Request::post("/api/jobs").body(Body::from("{not json")).unwrap();
    assert_eq!(
        app.clone().oneshot(req).await.unwrap().status(),
        StatusCode::BAD_REQUEST
    );
    for uri in [
        "/api/jobs/job-424242",
        "/api/jobs/job-424242/events",
        "/api/jobs/job-424242/candidates",
        "/api/blobs/00",
    ] {
        let (status, _) = call(&app, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
    let (status, _) = call(&app, "POST", "/api/jobs/job-424242/rerun", Some(serde_json::json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_the_studio_page() {
    let resp = app(None)
        .oneshot(Request::get("/").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert!(std::str::from_utf8(&body).unwrap().contains("EventSource"));
}
