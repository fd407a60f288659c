//! Corpus-level aggregation: per-scan dispositions, the per-check failure
//! rate table, FOV and z-spacing histograms, and the exported report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::findings::{CheckId, Outcome, QaFinding, QaThresholds};
use crate::verdicts::{latest_verdicts, ReviewVerdict, VerdictKind};

pub const REPORT_FILE: &str = "report.json";
pub const RATES_FILE: &str = "rates.csv";
pub const SCANS_FILE: &str = "scans.csv";
pub const FOV_HIST_FILE: &str = "fov_hist.csv";
pub const SPACING_HIST_FILE: &str = "spacing_hist.csv";

pub const DEFAULT_FOV_BIN_MM: f64 = 10.0;
pub const DEFAULT_SPACING_BIN_MM: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("duplicate scan id {0}")]
    DuplicateScanId(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Final per-scan outcome; ordered pass < needs-review < warn < fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Pass,
    NeedsReview,
    Warn,
    Fail,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Pass => "pass",
            Disposition::NeedsReview => "needs-review",
            Disposition::Warn => "warn",
            Disposition::Fail => "fail",
        }
    }
}

/// Quantities feeding the distribution summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub slice_count: Option<usize>,
    pub modal_spacing_mm: Option<f64>,
    pub physical_length_mm: Option<f64>,
    /// Column spacing x columns.
    pub axial_fov_mm: Option<f64>,
    pub voxel_size_mm: Option<[f64; 3]>,
}

/// Output files of one scan, relative to the output root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanOutputs {
    pub nifti: Option<String>,
    pub roi: Option<String>,
    pub montage: Option<String>,
}

/// Objective result of one scan, as produced by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub scan_id: String,
    pub series_uid: Option<String>,
    pub source_dir: String,
    /// C1..C7 in order.
    pub findings: Vec<QaFinding>,
    pub warnings: Vec<String>,
    /// Scan-level failure such as an unparseable file.
    pub error: Option<String>,
    pub metrics: ScanMetrics,
    pub outputs: ScanOutputs,
}

impl ScanResult {
    pub fn finding(&self, check: CheckId) -> Option<&QaFinding> {
        self.findings.iter().find(|f| f.check == check)
    }

    /// Objective checks that failed (auto-fixed ones included).
    pub fn failed_checks(&self) -> BTreeSet<CheckId> {
        self.findings.iter().filter(|f| f.failed()).map(|f| f.check).collect()
    }

    /// A failed check that was not repaired, or a scan-level error.
    pub fn has_hard_failure(&self) -> bool {
        self.error.is_some() || self.findings.iter().any(|f| f.failed() && !f.auto_fixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan: ScanResult,
    pub sampled_for_review: bool,
    pub verdict: Option<ReviewVerdict>,
    /// Subjective finding derived from the verdict.
    pub subjective: QaFinding,
    pub disposition: Disposition,
}

impl ScanRecord {
    pub fn scan_id(&self) -> &str {
        &self.scan.scan_id
    }

    pub fn finding(&self, check: CheckId) -> Option<&QaFinding> {
        if check == CheckId::Subj {
            Some(&self.subjective)
        } else {
            self.scan.finding(check)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub section: String,
    pub check: CheckId,
    pub name: String,
    pub failed: usize,
    pub applicable: usize,
    /// Two decimals and a percent sign, e.g. "0.40%"; "n/a" without
    /// applicable scans.
    pub failure_pct: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower_mm: f64,
    pub upper_mm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_mm: f64,
    /// Contiguous from the lowest to the highest occupied bin.
    pub bins: Vec<HistogramBin>,
    /// Scans without the quantity.
    pub missing: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub axial_fov_histogram: Histogram,
    pub z_spacing_histogram: Histogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewSampling {
    pub seed: u64,
    pub requested: usize,
    /// Sorted scan ids.
    pub sampled: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub scans: usize,
    pub pass: usize,
    pub needs_review: usize,
    pub warn: usize,
    pub fail: usize,
    /// Scans failing at least one check (each counted once).
    pub failing_any_check: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub corpus_id: String,
    pub generated_at: String,
    pub thresholds: QaThresholds,
    pub review: ReviewSampling,
    pub totals: Totals,
    pub rate_table: Vec<RateRow>,
    pub distributions: DistributionSummary,
    /// Sorted by scan id.
    pub scan_records: Vec<ScanRecord>,
}

impl QaReport {
    pub fn record(&self, scan_id: &str) -> Option<&ScanRecord> {
        self.scan_records
            .binary_search_by(|r| r.scan_id().cmp(scan_id))
            .ok()
            .map(|i| &self.scan_records[i])
    }

    pub fn rate(&self, check: CheckId) -> Option<&RateRow> {
        self.rate_table.iter().find(|r| r.check == check)
    }

    pub fn results(&self) -> Vec<ScanResult> {
        self.scan_records.iter().map(|r| r.scan.clone()).collect()
    }
}

/// Everything about a report that does not come from the scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportContext {
    pub corpus_id: String,
    pub generated_at: String,
    pub thresholds: QaThresholds,
    pub review: ReviewSampling,
    pub fov_bin_mm: f64,
    pub spacing_bin_mm: f64,
}

impl ReportContext {
    pub fn of(report: &QaReport) -> Self {
        Self {
            corpus_id: report.corpus_id.clone(),
            generated_at: report.generated_at.clone(),
            thresholds: report.thresholds.clone(),
            review: report.review.clone(),
            fov_bin_mm: report.distributions.axial_fov_histogram.bin_width_mm,
            spacing_bin_mm: report.distributions.z_spacing_histogram.bin_width_mm,
        }
    }
}

/// Uniform sample of `n` scan ids without replacement, reproducible from
/// `seed` (independent of input order).
pub fn sample_for_review(scan_ids: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut ids: Vec<&String> = scan_ids.iter().collect();
    ids.sort();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = sample(&mut rng, ids.len(), n.min(ids.len()))
        .into_iter()
        .map(|i| ids[i].clone())
        .collect();
    picked.sort();
    picked
}

pub fn subjective_finding(verdict: Option<&ReviewVerdict>) -> QaFinding {
    match verdict {
        None => QaFinding::not_applicable(CheckId::Subj, "not reviewed"),
        Some(v) => {
            let (value, label) = match v.verdict {
                VerdictKind::Fail => (1, "fail"),
                VerdictKind::Pass => (0, "pass"),
                VerdictKind::Flag => (0, "flag"),
            };
            let mut detail = format!("reviewer verdict {label}");
            if !v.note.is_empty() {
                detail.push_str(": ");
                detail.push_str(&v.note);
            }
            QaFinding::evaluated(CheckId::Subj, value, detail)
        }
    }
}

/// Reviewer fail overrides everything; otherwise a hard objective failure
/// fails, an auto-fix, warning or flag warns, an unreviewed sampled scan
/// needs review, and the rest pass.
pub fn disposition(scan: &ScanResult, verdict: Option<&ReviewVerdict>, sampled: bool) -> Disposition {
    let kind = verdict.map(|v| v.verdict);
    if kind == Some(VerdictKind::Fail) || scan.has_hard_failure() {
        return Disposition::Fail;
    }
    let auto_fixed = scan.findings.iter().any(|f| f.auto_fixed);
    if auto_fixed || !scan.warnings.is_empty() || kind == Some(VerdictKind::Flag) {
        return Disposition::Warn;
    }
    if sampled && kind.is_none() {
        return Disposition::NeedsReview;
    }
    Disposition::Pass
}

/// Percentage with two decimals from exact integer arithmetic, rounding
/// half up: 4 of 1000 is "0.40%".
pub fn format_rate(failed: usize, applicable: usize) -> String {
    if applicable == 0 {
        return "n/a".into();
    }
    let hundredths = (failed as u128 * 20000 + applicable as u128) / (2 * applicable as u128);
    format!("{}.{:02}%", hundredths / 100, hundredths % 100)
}

pub fn rate_table(records: &[ScanRecord]) -> Vec<RateRow> {
    CheckId::ALL
        .iter()
        .map(|&check| {
            let mut failed = 0;
            let mut applicable = 0;
            for r in records {
                match r.finding(check).map(|f| f.outcome) {
                    Some(Outcome::Fail) => {
                        failed += 1;
                        applicable += 1;
                    }
                    Some(Outcome::Pass) => applicable += 1,
                    _ => {}
                }
            }
            RateRow {
                section: check.section().into(),
                check,
                name: check.name().into(),
                failed,
                applicable,
                failure_pct: format_rate(failed, applicable),
            }
        })
        .collect()
}

pub fn histogram(values: &[Option<f64>], bin_width: f64) -> Histogram {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut missing = 0;
    for v in values {
        match v {
            Some(x) if x.is_finite() => {
                // Nudge so that values sitting on an edge land in the upper bin
                // despite representation error (2.5 / 0.25).
                let idx = (x / bin_width + 1e-9).floor() as i64;
                *counts.entry(idx).or_default() += 1;
            }
            _ => missing += 1,
        }
    }
    let bins = match (counts.keys().next(), counts.keys().next_back()) {
        (Some(&lo), Some(&hi)) => (lo..=hi)
            .map(|i| HistogramBin {
                lower_mm: i as f64 * bin_width,
                upper_mm: (i + 1) as f64 * bin_width,
                count: counts.get(&i).copied().unwrap_or(0),
            })
            .collect(),
        _ => Vec::new(),
    };
    Histogram {
        bin_width_mm: bin_width,
        bins,
        missing,
    }
}

pub fn summarize_distributions(scans: &[ScanResult], fov_bin_mm: f64, spacing_bin_mm: f64) -> DistributionSummary {
    let fov: Vec<Option<f64>> = scans.iter().map(|s| s.metrics.axial_fov_mm).collect();
    let spacing: Vec<Option<f64>> = scans.iter().map(|s| s.metrics.modal_spacing_mm).collect();
    DistributionSummary {
        axial_fov_histogram: histogram(&fov, fov_bin_mm),
        z_spacing_histogram: histogram(&spacing, spacing_bin_mm),
    }
}

/// Merges objective results with review verdicts. Verdicts for unknown
/// scans are ignored; the latest verdict per scan wins.
pub fn aggregate(
    context: &ReportContext,
    scans: Vec<ScanResult>,
    verdicts: &[ReviewVerdict],
) -> Result<QaReport, ReportError> {
    let mut scans = scans;
    scans.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    if let Some(w) = scans.windows(2).find(|w| w[0].scan_id == w[1].scan_id) {
        return Err(ReportError::DuplicateScanId(w[0].scan_id.clone()));
    }
    let latest = latest_verdicts(verdicts);
    let sampled: BTreeSet<&str> = context.review.sampled.iter().map(String::as_str).collect();
    let distributions = summarize_distributions(&scans, context.fov_bin_mm, context.spacing_bin_mm);
    let mut totals = Totals::default();
    let records: Vec<ScanRecord> = scans
        .into_iter()
        .map(|scan| {
            let verdict = latest.get(&scan.scan_id).cloned();
            let is_sampled = sampled.contains(scan.scan_id.as_str());
            let disposition = disposition(&scan, verdict.as_ref(), is_sampled);
            totals.scans += 1;
            match disposition {
                Disposition::Pass => totals.pass += 1,
                Disposition::NeedsReview => totals.needs_review += 1,
                Disposition::Warn => totals.warn += 1,
                Disposition::Fail => totals.fail += 1,
            }
            let subjective = subjective_finding(verdict.as_ref());
            if !scan.failed_checks().is_empty() || subjective.failed() {
                totals.failing_any_check += 1;
            }
            ScanRecord {
                scan,
                sampled_for_review: is_sampled,
                verdict,
                subjective,
                disposition,
            }
        })
        .collect();
    Ok(QaReport {
        corpus_id: context.corpus_id.clone(),
        generated_at: context.generated_at.clone(),
        thresholds: context.thresholds.clone(),
        review: context.review.clone(),
        totals,
        rate_table: rate_table(&records),
        distributions,
        scan_records: records,
    })
}

/// Re-aggregates a report with a (new) verdict log.
pub fn with_verdicts(report: &QaReport, verdicts: &[ReviewVerdict]) -> Result<QaReport, ReportError> {
    aggregate(&ReportContext::of(report), report.results(), verdicts)
}

pub fn report_json(report: &QaReport) -> Result<String, ReportError> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn read_report(path: &Path) -> Result<QaReport, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

pub fn rates_csv(report: &QaReport) -> Result<Vec<u8>, ReportError> {
    csv_bytes(
        &["section", "check", "name", "failed", "applicable", "failure_pct"],
        report.rate_table.iter().map(|r| {
            vec![
                r.section.clone(),
                r.check.to_string(),
                r.name.clone(),
                r.failed.to_string(),
                r.applicable.to_string(),
                r.failure_pct.clone(),
            ]
        }),
    )
}

pub fn scans_csv(report: &QaReport) -> Result<Vec<u8>, ReportError> {
    let mut header = vec!["scan_id", "disposition"];
    header.extend(CheckId::ALL.iter().map(|c| c.code()));
    header.extend(["auto_fixed", "warnings", "error"]);
    csv_bytes(
        &header,
        report.scan_records.iter().map(|r| {
            let mut row = vec![r.scan_id().to_string(), r.disposition.as_str().to_string()];
            for c in CheckId::ALL {
                row.push(
                    r.finding(c)
                        .and_then(|f| f.value)
                        .map(|v| v.to_string())
                        .unwrap_or_default(),
                );
            }
            let fixed: Vec<&str> = r
                .scan
                .findings
                .iter()
                .filter(|f| f.auto_fixed)
                .map(|f| f.check.code())
                .collect();
            row.push(fixed.join(";"));
            row.push(r.scan.warnings.join(";"));
            row.push(r.scan.error.clone().unwrap_or_default());
            row
        }),
    )
}

pub fn histogram_csv(h: &Histogram) -> Result<Vec<u8>, ReportError> {
    let decimals = if h.bin_width_mm.fract() == 0.0 { 0 } else { 2 };
    csv_bytes(
        &["lower_mm", "upper_mm", "count"],
        h.bins.iter().map(|b| {
            vec![
                format!("{:.decimals$}", b.lower_mm),
                format!("{:.decimals$}", b.upper_mm),
                b.count.to_string(),
            ]
        }),
    )
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes report.json, rates.csv, scans.csv, fov_hist.csv and
/// spacing_hist.csv into `dir`; returns their paths.
pub fn export(report: &QaReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files: [(&str, Vec<u8>); 5] = [
        (REPORT_FILE, report_json(report)?.into_bytes()),
        (RATES_FILE, rates_csv(report)?),
        (SCANS_FILE, scans_csv(report)?),
        (FOV_HIST_FILE, histogram_csv(&report.distributions.axial_fov_histogram)?),
        (
            SPACING_HIST_FILE,
            histogram_csv(&report.distributions.z_spacing_histogram)?,
        ),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
