//! Aggregate scan results and reviewer verdicts into the rate table,
//! dispositions and distribution histograms, then export the CSV files.
//!
//!     cargo run --example report

use chrono::{TimeZone, Utc};
use ctqa::report::{aggregate, export, rates_csv, ReportContext, ReviewSampling, ScanMetrics, ScanOutputs, ScanResult};
use ctqa::verdicts::{ReviewVerdict, VerdictKind};
use ctqa::{CheckId, QaFinding, QaThresholds};

fn scan(id: &str, c1: i64, fov: f64, spacing: f64) -> ScanResult {
    let findings = CheckId::OBJECTIVE
        .iter()
        .map(|c| match c {
            CheckId::C1 => QaFinding::evaluated(*c, c1, ""),
            CheckId::C5 | CheckId::C6 => QaFinding::evaluated(*c, 1, ""),
            _ => QaFinding::evaluated(*c, 0, ""),
        })
        .collect();
    ScanResult {
        scan_id: id.into(),
        series_uid: None,
        source_dir: id.into(),
        findings,
        warnings: Vec::new(),
        error: None,
        metrics: ScanMetrics {
            axial_fov_mm: Some(fov),
            modal_spacing_mm: Some(spacing),
            ..Default::default()
        },
        outputs: ScanOutputs::default(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scans = vec![
        scan("a", 0, 350.0, 2.5),
        scan("b", 3, 362.0, 2.5),
        scan("c", 0, 410.0, 1.25),
        scan("d", 0, 355.0, 2.5),
    ];
    let verdict = |id: &str, v| ReviewVerdict {
        scan_id: id.into(),
        verdict: v,
        note: String::new(),
        reviewer: "demo".into(),
        timestamp: Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap(),
    };
    let verdicts = [verdict("c", VerdictKind::Fail), verdict("d", VerdictKind::Flag)];
    let context = ReportContext {
        corpus_id: "demo".into(),
        generated_at: "2024-05-01T12:00:00Z".into(),
        thresholds: QaThresholds::default(),
        review: ReviewSampling::default(),
        fov_bin_mm: 10.0,
        spacing_bin_mm: 0.25,
    };
    let report = aggregate(&context, scans, &verdicts)?;
    for r in &report.scan_records {
        println!("{} -> {}", r.scan_id(), r.disposition.as_str());
    }
    print!("\n{}", String::from_utf8(rates_csv(&report)?)?);
    println!("\naxial FOV histogram:");
    for bin in &report.distributions.axial_fov_histogram.bins {
        println!("  [{}, {}) mm: {}", bin.lower_mm, bin.upper_mm, bin.count);
    }
    let dir = tempfile::tempdir()?;
    for path in export(&report, dir.path())? {
        println!("wrote {}", path.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}
