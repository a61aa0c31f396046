use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use explainpipe_core::corpus::labels;
use explainpipe_core::fixtures::{ratings_for_label_means, records_with_pools};
use explainpipe_core::pipeline::predictions_to_jsonl;
use explainpipe_core::study::{StudyDefinition, COHERENCE, PERFIDIOUSNESS, PLAUSIBILITY};
use explainpipe_core::{sample_for_study, Rating, Study, StudyConfig};
use explainpipe_gateway::config::{PREDICTIONS_FILE, RATINGS_FILE, STUDY_FILE};
use explainpipe_gateway::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const METRICS: [&str; 3] = [PLAUSIBILITY, COHERENCE, PERFIDIOUSNESS];

/// Writes a sentiment study (pools 197/117/8, sampled 11/11/8) into `dir`.
fn seed_storage(dir: &Path) -> StudyDefinition {
    let records = records_with_pools(&[("Neutral", 197), ("Negative", 117), ("Positive", 8)]);
    let cfg = StudyConfig {
        sampling_seed: 2024,
        ..StudyConfig::default()
    };
    let sample = sample_for_study(&records, &cfg, &labels(&["Neutral", "Negative", "Positive"])).unwrap();
    let def = StudyDefinition { config: cfg, sample };
    def.save(&dir.join(STUDY_FILE)).unwrap();
    std::fs::write(dir.join(PREDICTIONS_FILE), predictions_to_jsonl(&records)).unwrap();
    def
}

fn app(dir: &Path) -> Router {
    router(AppState::open(dir).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn scores(p: i64, c: i64, f: i64) -> Value {
    json!({PLAUSIBILITY: p, COHERENCE: c, PERFIDIOUSNESS: f})
}

#[tokio::test]
async fn items_carry_the_whole_ordered_sample() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    let app = app(dir.path());
    let (status, body) = call(&app, "GET", "/api/study/items?rater=ana", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["instance_id"].as_str().unwrap())
        .collect();
    let want: Vec<&str> = def.sample.items.iter().map(|r| r.instance_id.as_str()).collect();
    assert_eq!(ids, want);
    assert_eq!(body["cursor"], 0);
    assert_eq!(body["total"], 30);
    assert!(body["items"][0]["explanation"].is_string());

    let (status, body) = call(&app, "GET", "/api/study/items", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "rater");
}

#[tokio::test]
async fn rating_contract() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    let app = app(dir.path());
    let id = def.sample.items[0].instance_id.clone();
    let post = |body: Value| {
        let app = app.clone();
        async move { call(&app, "POST", "/api/study/ratings", Some(body)).await }
    };

    let (s, b) = post(json!({"rater_id": "ana", "instance_id": id, "scores": scores(8, 7, 2)})).await;
    assert_eq!(s, StatusCode::CREATED, "{b}");
    assert_eq!(b["cursor"], 1);

    let (s, b) = post(json!({"rater_id": "ana", "instance_id": id, "scores": scores(9, 7, 2)})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(b["error"]["code"], "duplicate");

    let (s, b) =
        post(json!({"rater_id": "ana", "instance_id": id, "scores": scores(9, 7, 2), "overwrite": true})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(b["superseded"], true);

    let (s, b) = post(json!({"rater_id": "bob", "instance_id": id, "scores": scores(11, 7, 2)})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["field"], "scores.plausibility");
    assert!(b["error"]["message"].as_str().unwrap().contains("out of scale"));

    let (s, b) = post(
        json!({"rater_id": "bob", "instance_id": id, "scores": {PLAUSIBILITY: 7.5, COHERENCE: 7, PERFIDIOUSNESS: 2}}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["field"], "scores.plausibility");

    let (s, b) = post(json!({"rater_id": "bob", "instance_id": id, "scores": {PLAUSIBILITY: 7, COHERENCE: 7}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["field"], "scores.perfidiousness");

    let (s, b) = post(json!({"rater_id": "", "instance_id": id, "scores": scores(1, 1, 1)})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["field"], "rater_id");

    let (s, _) = post(json!({"rater_id": "bob", "instance_id": "ghost", "scores": scores(1, 1, 1)})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, b) = post(json!({"rater_id": "bob"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["error"]["code"], "malformed");

    let (s, b) = call(&app, "GET", "/api/study/progress?rater=ana", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["rated"], 1);
    assert_eq!(b["cursor"], 1);
}

#[tokio::test]
async fn ratings_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    {
        let app = app(dir.path());
        for item in def.sample.items.iter().take(3) {
            let (s, _) = call(
                &app,
                "POST",
                "/api/study/ratings",
                Some(json!({"rater_id": "ana", "instance_id": item.instance_id, "scores": scores(6, 6, 3)})),
            )
            .await;
            assert_eq!(s, StatusCode::CREATED);
        }
    }
    let app = app(dir.path());
    let (_, progress) = call(&app, "GET", "/api/study/progress?rater=ana", None).await;
    assert_eq!(progress["rated"], 3);
    assert_eq!(progress["cursor"], 3);
    let (_, items) = call(&app, "GET", "/api/study/items?rater=ana", None).await;
    assert_eq!(items["cursor"], 3);
    let (s, _) = call(
        &app,
        "POST",
        "/api/study/ratings",
        Some(json!({"rater_id": "ana", "instance_id": def.sample.items[0].instance_id, "scores": scores(6, 6, 3)})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn api_and_module_agree() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    let app = app(dir.path());
    let module = Study::new(def.config.clone(), def.sample.clone()).unwrap();
    for (r, rater) in ["ana", "bob", "eve"].iter().enumerate() {
        for (i, item) in def.sample.items.iter().enumerate() {
            if (i + r) % 4 == 0 {
                continue;
            }
            let s = [
                (PLAUSIBILITY, 1 + ((i * 3 + r) % 10) as i64),
                (COHERENCE, 1 + ((i + 2 * r) % 10) as i64),
                (PERFIDIOUSNESS, 1 + ((i * 7 + r) % 10) as i64),
            ];
            let body = json!({"rater_id": rater, "instance_id": item.instance_id, "scores": {s[0].0: s[0].1, s[1].0: s[1].1, s[2].0: s[2].1}});
            let (status, _) = call(&app, "POST", "/api/study/ratings", Some(body)).await;
            assert_eq!(status, StatusCode::CREATED);
            module
                .submit_rating(Rating::new(*rater, &item.instance_id, &s), false)
                .unwrap();
        }
    }
    let (status, via_api) = call(&app, "GET", "/api/study/report", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(via_api, serde_json::to_value(module.aggregate().unwrap()).unwrap());
}

#[tokio::test]
async fn report_reproduces_sentiment_table() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    let ratings = ratings_for_label_means(
        &def.sample,
        &METRICS,
        100,
        &[
            ("Neutral", &[900, 768, 141]),
            ("Negative", &[634, 506, 241]),
            ("Positive", &[546, 429, 296]),
        ],
    )
    .unwrap();
    {
        let study = Study::with_log(def.config.clone(), def.sample.clone(), dir.path().join(RATINGS_FILE)).unwrap();
        for r in ratings {
            study.submit_rating(r, false).unwrap();
        }
    }
    let app = app(dir.path());
    let (status, report) = call(&app, "GET", "/api/study/report", None).await;
    assert_eq!(status, StatusCode::OK);
    let overall: Vec<String> = METRICS
        .iter()
        .map(|m| format!("{:.2}", report["overall"][*m].as_f64().unwrap()))
        .collect();
    assert_eq!(overall, ["7.08", "5.82", "2.19"]);
    assert_eq!(report["per_label"]["Negative"][PLAUSIBILITY], 6.34);
    assert_eq!(report["rater_count"], 100);
}

#[tokio::test]
async fn empty_report_and_prediction_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let def = seed_storage(dir.path());
    let app = app(dir.path());
    let (status, body) = call(&app, "GET", "/api/study/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "zero_ratings");

    let id = &def.sample.items[5].instance_id;
    let (status, body) = call(&app, "GET", &format!("/api/predictions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["instance_id"], id.as_str());
    assert!(body["explanation"].is_string());
    // unsampled records from predictions.jsonl are served too
    let (status, _) = call(&app, "GET", "/api/predictions/Neutral-196", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "GET", "/api/predictions/ghost", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn missing_study_fails_to_open() {
    let dir = tempfile::tempdir().unwrap();
    let err = AppState::open(dir.path()).err().unwrap();
    assert!(format!("{err:#}").contains("study init"));
}
