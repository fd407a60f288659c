//! Review API over a pipeline output directory. Without arguments, runs the
//! pipeline on a tiny corpus, submits three verdicts in-process and prints
//! the resulting dispositions. With an address, serves until stopped.
//!
//!     cargo run --example review_service [127.0.0.1:8080]

use axum::body::Body;
use axum::http::Request;
use chrono::{TimeZone, Utc};
use ctqa::config::PipelineConfig;
use ctqa::pipeline::run_pipeline;
use ctqa::service::{serve_review, ReviewService};
use ctqa::synth::{write_corpus, CorpusSpec};
use http_body_util::BodyExt;
use tower::ServiceExt;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let input = scratch.path().join("corpus");
    let output = scratch.path().join("qa");
    let spec = CorpusSpec {
        clean: 3,
        defects: Vec::new(),
        ..CorpusSpec::benchmark(1)
    };
    write_corpus(&input, &spec)?;
    let mut config = PipelineConfig::new(&input, &output);
    config.fixed_clock = Some(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    run_pipeline(&config)?;

    if let Some(addr) = std::env::args().nth(1) {
        println!("serving {} on http://{addr}", output.display());
        serve_review(&output, addr.parse()?).await?;
        return Ok(());
    }

    let app = ReviewService::open(&output)?.router();
    for (id, verdict) in [("clean_000", "pass"), ("clean_001", "fail"), ("clean_002", "flag")] {
        let body = format!(r#"{{"scan_id":"{id}","verdict":"{verdict}","reviewer":"demo"}}"#);
        let request = Request::post("/api/verdicts")
            .header("content-type", "application/json")
            .body(Body::from(body))?;
        let response = app.clone().oneshot(request).await?;
        println!("POST verdict {id}={verdict}: {}", response.status());
    }
    let response = app
        .clone()
        .oneshot(Request::get("/api/scans?per_page=10").body(Body::empty())?)
        .await?;
    let bytes = response.into_body().collect().await?.to_bytes();
    let page: serde_json::Value = serde_json::from_slice(&bytes)?;
    for item in page["items"].as_array().into_iter().flatten() {
        println!("{} -> {}", item["scan_id"], item["disposition"]);
    }
    let response = app.oneshot(Request::post("/api/finalize").body(Body::empty())?).await?;
    println!("finalize: {}", response.status());
    println!(
        "verdict log:\n{}",
        std::fs::read_to_string(output.join("verdicts.jsonl"))?
    );
    Ok(())
}
