//! Review service over a pipeline output directory.
//!
//! Endpoints:
//!
//! - `GET /api/scans?page=&per_page=&filter=&blind=`: paged scan list with
//!   objective badges, montage URL and current verdict. `filter` is one of
//!   `all`, `unreviewed`, `reviewed`, `sampled`; `blind=true` hides badges
//!   and dispositions.
//! - `GET /montages/<scan_id>.png`
//! - `POST /api/verdicts`: body `{scan_id, verdict, note?, reviewer?,
//!   timestamp?}`, appended to `verdicts.jsonl`.
//! - `GET /api/report`: the report merged with the current verdict log.
//! - `POST /api/finalize`: rewrites the report files with the verdicts.
//! - `GET /`: the static gallery page.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::findings::CheckId;
use crate::gallery::badge_class;
use crate::pipeline::{write_gallery_index, GALLERY_DIR, INDEX_FILE};
use crate::report::{export, read_report, with_verdicts, Disposition, QaReport, ReportError, REPORT_FILE};
use crate::verdicts::{append_verdict, read_verdicts, ReviewVerdict, VerdictSubmission, VERDICTS_FILE};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

struct Inner {
    dir: PathBuf,
    /// Objective results; verdicts are merged on every read.
    base: QaReport,
    /// Serializes verdict appends and finalize.
    write: Arc<Mutex<()>>,
}

#[derive(Clone)]
pub struct ReviewService {
    inner: Arc<Inner>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFilter {
    #[default]
    All,
    Unreviewed,
    Reviewed,
    Sampled,
}

#[derive(Debug, Deserialize)]
pub struct ScansQuery {
    #[serde(default)]
    pub page: usize,
    pub per_page: Option<usize>,
    #[serde(default)]
    pub filter: ScanFilter,
    #[serde(default)]
    pub blind: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanItem {
    pub scan_id: String,
    /// Check code to pass / fail / warn / na. Empty in blind mode.
    pub badges: BTreeMap<CheckId, String>,
    pub montage_url: Option<String>,
    pub verdict: Option<ReviewVerdict>,
    pub sampled_for_review: bool,
    /// Omitted in blind mode.
    pub disposition: Option<Disposition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPage {
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub items: Vec<ScanItem>,
}

impl ReviewService {
    /// Loads `report.json` from a pipeline output directory.
    pub fn open(dir: &Path) -> Result<Self, ReportError> {
        let base = read_report(&dir.join(REPORT_FILE))?;
        Ok(Self {
            inner: Arc::new(Inner {
                dir: dir.to_path_buf(),
                base,
                write: Arc::new(Mutex::new(())),
            }),
        })
    }

    /// The lock held while a verdict is appended or the report is rewritten.
    pub fn write_lock(&self) -> Arc<Mutex<()>> {
        self.inner.write.clone()
    }

    fn verdicts_path(&self) -> PathBuf {
        self.inner.dir.join(VERDICTS_FILE)
    }

    /// Report merged with the verdict log as it is now.
    pub fn current_report(&self) -> Result<QaReport, String> {
        let verdicts = read_verdicts(&self.verdicts_path()).map_err(|e| e.to_string())?;
        with_verdicts(&self.inner.base, &verdicts).map_err(|e| e.to_string())
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/", get(index))
            .route("/api/scans", get(list_scans))
            .route("/api/verdicts", post(post_verdict))
            .route("/api/report", get(get_report))
            .route("/api/finalize", post(finalize))
            .route("/montages/{file}", get(montage))
            .with_state(self.clone())
    }
}

async fn index(State(svc): State<ReviewService>) -> Response {
    let path = svc.inner.dir.join(GALLERY_DIR).join(INDEX_FILE);
    match tokio::fs::read_to_string(&path).await {
        Ok(html) => Html(html).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "gallery index not built"),
    }
}

async fn list_scans(State(svc): State<ReviewService>, Query(q): Query<ScansQuery>) -> Response {
    let report = match svc.current_report() {
        Ok(r) => r,
        Err(e) => return internal(e),
    };
    let per_page = q.per_page.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let selected: Vec<_> = report
        .scan_records
        .iter()
        .filter(|r| match q.filter {
            ScanFilter::All => true,
            ScanFilter::Unreviewed => r.verdict.is_none(),
            ScanFilter::Reviewed => r.verdict.is_some(),
            ScanFilter::Sampled => r.sampled_for_review,
        })
        .collect();
    let items = selected
        .iter()
        .skip(q.page.saturating_mul(per_page))
        .take(per_page)
        .map(|r| ScanItem {
            scan_id: r.scan_id().to_string(),
            badges: if q.blind {
                BTreeMap::new()
            } else {
                CheckId::OBJECTIVE
                    .iter()
                    .map(|c| (*c, badge_class(r.scan.finding(*c)).to_string()))
                    .collect()
            },
            montage_url: r
                .scan
                .outputs
                .montage
                .as_ref()
                .map(|_| format!("/montages/{}.png", r.scan_id())),
            verdict: r.verdict.clone(),
            sampled_for_review: r.sampled_for_review,
            disposition: (!q.blind).then_some(r.disposition),
        })
        .collect();
    Json(ScanPage {
        total: selected.len(),
        page: q.page,
        per_page,
        items,
    })
    .into_response()
}

async fn montage(State(svc): State<ReviewService>, UrlPath(file): UrlPath<String>) -> Response {
    let Some(scan_id) = file.strip_suffix(".png") else {
        return error(StatusCode::NOT_FOUND, "not a montage");
    };
    let Some(rel) = svc
        .inner
        .base
        .record(scan_id)
        .and_then(|r| r.scan.outputs.montage.clone())
    else {
        return error(StatusCode::NOT_FOUND, format!("no montage for {scan_id}"));
    };
    match tokio::fs::read(svc.inner.dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, format!("montage file missing for {scan_id}")),
    }
}

async fn post_verdict(
    State(svc): State<ReviewService>,
    body: Result<Json<VerdictSubmission>, JsonRejection>,
) -> Response {
    let submission = match body {
        Ok(Json(s)) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if svc.inner.base.record(&submission.scan_id).is_none() {
        return error(StatusCode::NOT_FOUND, format!("unknown scan {}", submission.scan_id));
    }
    let verdict = submission.into_verdict(Utc::now());
    let _guard = svc.inner.write.lock().await;
    let path = svc.verdicts_path();
    let v = verdict.clone();
    match tokio::task::spawn_blocking(move || append_verdict(&path, &v)).await {
        Ok(Ok(())) => (StatusCode::CREATED, Json(verdict)).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn get_report(State(svc): State<ReviewService>) -> Response {
    match svc.current_report() {
        Ok(r) => Json(r).into_response(),
        Err(e) => internal(e),
    }
}

async fn finalize(State(svc): State<ReviewService>) -> Response {
    let Ok(_guard) = svc.inner.write.try_lock() else {
        return error(StatusCode::CONFLICT, "a write is in flight");
    };
    let report = match svc.current_report() {
        Ok(r) => r,
        Err(e) => return internal(e),
    };
    let dir = svc.inner.dir.clone();
    let r = report.clone();
    let written = tokio::task::spawn_blocking(move || -> Result<(), String> {
        export(&r, &dir).map_err(|e| e.to_string())?;
        write_gallery_index(&r, &dir).map_err(|e| e.to_string())?;
        Ok(())
    })
    .await;
    match written {
        Ok(Ok(())) => Json(report.totals).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

/// Serves the review API until the process is stopped.
pub async fn serve_review(dir: &Path, addr: SocketAddr) -> std::io::Result<()> {
    let service = ReviewService::open(dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, service.router()).await
}
