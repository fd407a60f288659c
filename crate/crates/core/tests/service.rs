use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use ctqa::config::PipelineConfig;
use ctqa::pipeline::run_pipeline;
use ctqa::report::{read_report, Disposition, Totals, REPORT_FILE};
use ctqa::service::{ReviewService, ScanPage};
use ctqa::synth::CorpusSpec;
use ctqa::verdicts::{read_verdicts, ReviewVerdict, VerdictKind, VERDICTS_FILE};
use ctqa::CheckId;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn pipeline_output(root: &Path, scans: usize, sample: usize) -> std::path::PathBuf {
    let input = root.join("in");
    let output = root.join("out");
    let spec = CorpusSpec {
        clean: scans,
        defects: Vec::new(),
        ..CorpusSpec::benchmark(5)
    };
    ctqa::synth::write_corpus(&input, &spec).unwrap();
    let mut config = PipelineConfig::new(&input, &output);
    config.fixed_clock = Some(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    config.review_sample_size = sample;
    run_pipeline(&config).unwrap();
    output
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn three_verdicts_set_dispositions_and_log_three_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 3, 0);
    let app = ReviewService::open(&out).unwrap().router();

    for (id, verdict) in [("clean_000", "pass"), ("clean_001", "fail"), ("clean_002", "flag")] {
        let (status, body) = call_json(
            &app,
            "POST",
            "/api/verdicts",
            Some(json!({"scan_id": id, "verdict": verdict, "reviewer": "r1"})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        let stored: ReviewVerdict = serde_json::from_value(body).unwrap();
        assert_eq!(stored.scan_id, id);
    }

    let (status, body) = call_json(&app, "GET", "/api/report", None).await;
    assert_eq!(status, StatusCode::OK);
    let report: ctqa::report::QaReport = serde_json::from_value(body).unwrap();
    let disposition = |id: &str| report.record(id).unwrap().disposition;
    assert_eq!(disposition("clean_000"), Disposition::Pass);
    assert_eq!(disposition("clean_001"), Disposition::Fail);
    assert_eq!(disposition("clean_002"), Disposition::Warn);
    let subj = report.rate(CheckId::Subj).unwrap();
    assert_eq!((subj.failed, subj.applicable), (1, 3));

    let log = fs::read_to_string(out.join(VERDICTS_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);

    let (status, body) = call_json(&app, "POST", "/api/finalize", None).await;
    assert_eq!(status, StatusCode::OK);
    let totals: Totals = serde_json::from_value(body).unwrap();
    assert_eq!((totals.pass, totals.warn, totals.fail), (1, 1, 1));
    let on_disk = read_report(&out.join(REPORT_FILE)).unwrap();
    assert_eq!(on_disk, report);
    let rates = fs::read_to_string(out.join("rates.csv")).unwrap();
    assert!(
        rates.lines().any(|l| l.contains("SUBJ") && l.ends_with("33.33%")),
        "{rates}"
    );
}

#[tokio::test]
async fn latest_verdict_wins() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 1, 0);
    let app = ReviewService::open(&out).unwrap().router();
    for (verdict, ts) in [("fail", "2024-02-01T10:00:00Z"), ("pass", "2024-02-01T11:00:00Z")] {
        let body = json!({"scan_id": "clean_000", "verdict": verdict, "timestamp": ts});
        assert_eq!(
            call(&app, "POST", "/api/verdicts", Some(body)).await.0,
            StatusCode::CREATED
        );
    }
    let (_, body) = call_json(&app, "GET", "/api/scans", None).await;
    let page: ScanPage = serde_json::from_value(body).unwrap();
    let item = &page.items[0];
    assert_eq!(item.verdict.as_ref().unwrap().verdict, VerdictKind::Pass);
    assert_eq!(item.disposition, Some(Disposition::Pass));
    assert_eq!(read_verdicts(&out.join(VERDICTS_FILE)).unwrap().len(), 2);
}

#[tokio::test]
async fn rejects_malformed_and_unknown_submissions() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 1, 0);
    let app = ReviewService::open(&out).unwrap().router();
    for body in [
        json!({"scan_id": "clean_000", "verdict": "maybe"}),
        json!({"scan_id": "clean_000"}),
        json!({"scan_id": "clean_000", "verdict": "pass", "extra": 1}),
    ] {
        assert_eq!(
            call(&app, "POST", "/api/verdicts", Some(body)).await.0,
            StatusCode::BAD_REQUEST
        );
    }
    let body = json!({"scan_id": "nope", "verdict": "pass"});
    assert_eq!(
        call(&app, "POST", "/api/verdicts", Some(body)).await.0,
        StatusCode::NOT_FOUND
    );
    assert!(!out.join(VERDICTS_FILE).exists());
}

#[tokio::test]
async fn scans_are_paged_filtered_and_blindable() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 5, 2);
    let app = ReviewService::open(&out).unwrap().router();

    let (status, body) = call_json(&app, "GET", "/api/scans?page=1&per_page=2", None).await;
    assert_eq!(status, StatusCode::OK);
    let page: ScanPage = serde_json::from_value(body).unwrap();
    assert_eq!(page.total, 5);
    let ids: Vec<_> = page.items.iter().map(|i| i.scan_id.as_str()).collect();
    assert_eq!(ids, ["clean_002", "clean_003"]);
    let item = &page.items[0];
    assert_eq!(item.badges.len(), 7);
    assert!(item.badges.values().all(|b| b == "pass"));
    assert_eq!(item.montage_url.as_deref(), Some("/montages/clean_002.png"));

    let (_, body) = call_json(&app, "GET", "/api/scans?filter=sampled&blind=true", None).await;
    let page: ScanPage = serde_json::from_value(body).unwrap();
    assert_eq!(page.total, 2);
    for item in &page.items {
        assert!(item.badges.is_empty());
        assert_eq!(item.disposition, None);
        assert!(item.sampled_for_review);
    }

    let reviewed = page.items[0].scan_id.clone();
    let body = json!({"scan_id": reviewed, "verdict": "pass"});
    call(&app, "POST", "/api/verdicts", Some(body)).await;
    let (_, body) = call_json(&app, "GET", "/api/scans?filter=unreviewed", None).await;
    let page: ScanPage = serde_json::from_value(body).unwrap();
    assert_eq!(page.total, 4);
    assert!(page.items.iter().all(|i| i.scan_id != reviewed));

    assert_eq!(
        call(&app, "GET", "/api/scans?filter=bogus", None).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn serves_montages_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 1, 0);
    let app = ReviewService::open(&out).unwrap().router();
    let (status, bytes) = call(&app, "GET", "/montages/clean_000.png", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, fs::read(out.join("gallery/clean_000.png")).unwrap());
    assert_eq!(
        call(&app, "GET", "/montages/other.png", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, "GET", "/montages/clean_000.jpg", None).await.0,
        StatusCode::NOT_FOUND
    );
    let (status, html) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(html).unwrap().contains("clean_000"));
}

#[tokio::test]
async fn finalize_conflicts_while_a_write_is_in_flight() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline_output(dir.path(), 1, 0);
    let service = ReviewService::open(&out).unwrap();
    let app = service.router();
    let lock = service.write_lock();
    let guard = lock.lock().await;
    assert_eq!(call(&app, "POST", "/api/finalize", None).await.0, StatusCode::CONFLICT);
    drop(guard);
    assert_eq!(call(&app, "POST", "/api/finalize", None).await.0, StatusCode::OK);
}
