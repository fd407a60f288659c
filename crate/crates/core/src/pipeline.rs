//! Batch driver: discovers sessions under the input root, runs every stage
//! per scan in parallel, and aggregates and exports the corpus report.
//!
//! Stage order per scan: parse, manifest, C1..C5, (gate) assemble, C6 with
//! auto-reorientation, C7, NIfTI write, lung crop, montage. Failures are
//! recorded on the scan and never abort the batch.
//!
//! Output layout:
//!
//! ```text
//! <output>/report.json rates.csv scans.csv fov_hist.csv spacing_hist.csv
//! <output>/pipeline.json          resolved configuration
//! <output>/verdicts.jsonl         review log (written by the review service)
//! <output>/nifti/<scan_id>.nii.gz
//! <output>/roi/<scan_id>.nii.gz
//! <output>/gallery/<scan_id>.png, index.html
//! <output>/state/<scan_id>.json   per-scan result keyed by input digest
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::SecondsFormat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigInvalid, PipelineConfig, SelectionPolicy};
use crate::dicom::{decode_pixels, parse_slice, PixelSlab, SliceHeader};
use crate::findings::{CheckId, QaFinding, WARN_EMPTY_LUNG_MASK, WARN_SINGLE_LUNG};
use crate::gallery::{build_index, render_montage, IndexEntry, MontageOptions};
use crate::report::{
    aggregate, export, sample_for_review, QaReport, ReportContext, ReportError, ReviewSampling, ScanMetrics,
    ScanOutputs, ScanResult, DEFAULT_FOV_BIN_MM, DEFAULT_SPACING_BIN_MM,
};
use crate::series::{assess_headers, SeriesManifest};
use crate::verdicts::{read_verdicts, VerdictError, VERDICTS_FILE};
use crate::volume::nifti::write_nifti_file;
use crate::volume::orientation::{
    check_orientation, check_resolution, reorient_to_standard, voxel_size_per_world_axis,
};
use crate::volume::roi::{crop_roi, lung_mask, LungMaskParams, RoiError};
use crate::volume::{assemble_volume, Volume};

pub const NIFTI_DIR: &str = "nifti";
pub const ROI_DIR: &str = "roi";
pub const GALLERY_DIR: &str = "gallery";
pub const STATE_DIR: &str = "state";
pub const INDEX_FILE: &str = "index.html";
pub const PIPELINE_FILE: &str = "pipeline.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigInvalid),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("verdict log: {0}")]
    Verdicts(#[from] VerdictError),
    #[error("run interrupted after {completed} scans")]
    Interrupted { completed: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A directory holding DICOM files directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    /// Relative to the input root, '/'-separated.
    pub rel_dir: String,
    pub dir: PathBuf,
    /// Sorted by file name.
    pub files: Vec<PathBuf>,
}

fn is_candidate(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.starts_with('.') {
        return false;
    }
    match path.extension().and_then(|e| e.to_str()) {
        None => true,
        Some(e) => e.eq_ignore_ascii_case("dcm") || e.eq_ignore_ascii_case("ima"),
    }
}

/// Characters outside `[A-Za-z0-9._-]` become '_'.
pub fn sanitize_id(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Every directory under `root` that directly contains candidate files
/// (extension .dcm, .ima or none). `exclude` (the output root) is skipped.
pub fn discover_sessions(root: &Path, exclude: Option<&Path>) -> Result<Vec<Session>, PipelineError> {
    let mut sessions = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    let exclude = exclude.and_then(|p| p.canonicalize().ok());
    while let Some(dir) = stack.pop() {
        if let (Some(ex), Ok(canon)) = (&exclude, dir.canonicalize()) {
            if *ex == canon {
                continue;
            }
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io_err(&dir))?;
        entries.sort();
        let mut files = Vec::new();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else if path.is_file() && is_candidate(&path) {
                files.push(path);
            }
        }
        if !files.is_empty() {
            let rel: Vec<String> = dir
                .strip_prefix(root)
                .unwrap_or(&dir)
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            let rel_dir = rel.join("/");
            let id = if rel.is_empty() {
                let base = root
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                sanitize_id(if base.is_empty() { "root" } else { &base })
            } else {
                sanitize_id(&rel.join("__"))
            };
            sessions.push(Session {
                id,
                rel_dir,
                dir,
                files,
            });
        }
    }
    sessions.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(sessions)
}

/// Headers of one session, grouped into series.
struct ParsedSession {
    digest: String,
    /// (series uid, headers with absolute source paths).
    series: Vec<(String, Vec<SliceHeader>)>,
    /// First parse failure, if any.
    error: Option<String>,
}

fn parse_session(session: &Session, fingerprint: &str) -> Result<ParsedSession, PipelineError> {
    let mut hasher = Sha256::new();
    hasher.update(fingerprint.as_bytes());
    let mut groups: BTreeMap<String, Vec<SliceHeader>> = BTreeMap::new();
    let mut error = None;
    for path in &session.files {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        match parse_slice(&bytes) {
            Ok(h) => groups
                .entry(h.series_uid.clone())
                .or_default()
                .push(h.with_source(path.to_string_lossy())),
            Err(e) => {
                if error.is_none() {
                    error = Some(format!("unparseable: {name}: {e}"));
                }
            }
        }
    }
    let digest = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(ParsedSession {
        digest,
        series: groups.into_iter().collect(),
        error,
    })
}

/// Scans of a session under the selection policy: (scan id, series uid,
/// headers).
fn select_series(
    session: &Session,
    parsed: ParsedSession,
    policy: SelectionPolicy,
) -> Vec<(String, String, Vec<SliceHeader>)> {
    let mut series = parsed.series;
    match policy {
        SelectionPolicy::LargestSliceCount => {
            // Most slices; ties to the smallest uid (series are uid-sorted).
            let best = series
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.1.len().cmp(&b.1.len()).then(ib.cmp(ia)))
                .map(|(i, _)| i);
            match best {
                Some(i) => {
                    let (uid, headers) = series.swap_remove(i);
                    vec![(session.id.clone(), uid, headers)]
                }
                None => Vec::new(),
            }
        }
        SelectionPolicy::All => {
            let many = series.len() > 1;
            series
                .into_iter()
                .map(|(uid, headers)| {
                    let id = if many {
                        format!("{}__{}", session.id, sanitize_id(&uid))
                    } else {
                        session.id.clone()
                    };
                    (id, uid, headers)
                })
                .collect()
        }
    }
}

fn error_result(scan_id: &str, session: &Session, series_uid: Option<String>, error: String) -> ScanResult {
    let reason = if error.starts_with("unparseable") {
        "unparseable"
    } else {
        "scan error"
    };
    ScanResult {
        scan_id: scan_id.to_string(),
        series_uid,
        source_dir: session.rel_dir.clone(),
        findings: CheckId::OBJECTIVE
            .iter()
            .map(|c| QaFinding::not_applicable(*c, reason))
            .collect(),
        warnings: Vec::new(),
        error: Some(error),
        metrics: ScanMetrics::default(),
        outputs: ScanOutputs::default(),
    }
}

fn load_slabs(manifest: &SeriesManifest) -> Result<Vec<PixelSlab>, String> {
    manifest
        .slices
        .iter()
        .map(|h| {
            let bytes = fs::read(&h.source_path).map_err(|e| format!("{}: {e}", h.source_path))?;
            decode_pixels(h, &bytes).map_err(|e| format!("unparseable: {}: {e}", h.source_path))
        })
        .collect()
}

/// Parses every candidate file in `dir` and builds the manifest of its
/// largest series.
pub fn load_series(dir: &Path) -> Result<(SeriesManifest, Vec<PixelSlab>), String> {
    let sessions = discover_sessions(dir, None).map_err(|e| e.to_string())?;
    let session = sessions
        .into_iter()
        .find(|s| s.dir == dir)
        .ok_or_else(|| format!("no DICOM files in {}", dir.display()))?;
    let parsed = parse_session(&session, "").map_err(|e| e.to_string())?;
    if let Some(e) = parsed.error {
        return Err(e);
    }
    let (_, _, headers) = select_series(&session, parsed, SelectionPolicy::LargestSliceCount)
        .into_iter()
        .next()
        .ok_or("no series")?;
    let manifest = crate::series::build_manifest(headers).map_err(|e| e.to_string())?;
    let slabs = load_slabs(&manifest)?;
    Ok((manifest, slabs))
}

fn disable(findings: &mut [QaFinding], config: &PipelineConfig) {
    for f in findings.iter_mut() {
        if !config.toggles.enabled(f.check) {
            *f = QaFinding::not_applicable(f.check, "disabled");
        }
    }
}

fn process_scan(
    config: &PipelineConfig,
    session: &Session,
    scan_id: &str,
    series_uid: String,
    headers: Vec<SliceHeader>,
) -> Result<ScanResult, PipelineError> {
    let t = &config.thresholds;
    let mut metrics = ScanMetrics {
        slice_count: Some(headers.len()),
        axial_fov_mm: headers.first().map(|h| h.pixel_spacing[1] * f64::from(h.columns)),
        ..Default::default()
    };
    let (manifest, mut findings) = assess_headers(headers, t);
    disable(&mut findings, config);
    let mut result = ScanResult {
        scan_id: scan_id.to_string(),
        series_uid: Some(series_uid.clone()),
        source_dir: session.rel_dir.clone(),
        findings,
        warnings: Vec::new(),
        error: None,
        metrics: ScanMetrics::default(),
        outputs: ScanOutputs::default(),
    };
    let volume_na = |result: &mut ScanResult, reason: &str| {
        for c in [CheckId::C6, CheckId::C7] {
            let reason = if config.toggles.enabled(c) { reason } else { "disabled" };
            result.findings.push(QaFinding::not_applicable(c, reason));
        }
    };

    let manifest = match manifest {
        Ok(m) => m,
        Err(e) => {
            result.metrics = metrics;
            volume_na(&mut result, &format!("not assembled: {e}"));
            return Ok(result);
        }
    };
    metrics.modal_spacing_mm = (manifest.slice_count >= 2).then_some(manifest.modal_spacing);
    metrics.physical_length_mm = Some(manifest.physical_length);
    result.metrics = metrics;

    let gate: Vec<&str> = result
        .findings
        .iter()
        .filter(|f| f.failed() && f.check <= CheckId::C4)
        .map(|f| f.check.code())
        .collect();
    if !gate.is_empty() && !config.force_assembly {
        volume_na(&mut result, &format!("not assembled: failed {}", gate.join(", ")));
        return Ok(result);
    }

    let slabs = match load_slabs(&manifest) {
        Ok(s) => s,
        Err(e) => {
            let mut r = error_result(scan_id, session, Some(series_uid), e);
            r.metrics = result.metrics;
            return Ok(r);
        }
    };
    let mut volume = match assemble_volume(&manifest, &slabs) {
        Ok(v) => v,
        Err(e) => {
            let mut r = error_result(scan_id, session, Some(series_uid), format!("assembly: {e}"));
            r.metrics = result.metrics;
            return Ok(r);
        }
    };
    drop(slabs);

    let c6 = if config.toggles.enabled(CheckId::C6) {
        let mut f = check_orientation(&volume.affine);
        if f.failed() {
            if let Ok(fixed) = reorient_to_standard(&volume) {
                volume = fixed;
                f.auto_fixed = true;
                f.detail.push_str("; reoriented to standard");
            }
        }
        f
    } else {
        QaFinding::not_applicable(CheckId::C6, "disabled")
    };
    result.findings.push(c6);
    let c7 = if config.toggles.enabled(CheckId::C7) {
        check_resolution(&volume.affine, t)
    } else {
        QaFinding::not_applicable(CheckId::C7, "disabled")
    };
    result.findings.push(c7);
    result.metrics.voxel_size_mm = Some(voxel_size_per_world_axis(&volume.affine));

    let out = &config.output_root;
    let nifti_rel = format!("{NIFTI_DIR}/{scan_id}.nii.gz");
    let nifti_path = out.join(&nifti_rel);
    write_nifti_file(&nifti_path, &volume).map_err(|e| PipelineError::Io {
        path: nifti_path.clone(),
        source: io::Error::other(e.to_string()),
    })?;
    result.outputs.nifti = Some(nifti_rel);

    if config.toggles.crop {
        crop_stage(config, scan_id, &volume, &mut result)?;
    }
    if config.toggles.gallery {
        let options = MontageOptions {
            tile_size: config.tile_size,
            ..Default::default()
        };
        match render_montage(scan_id, &volume, &options).and_then(|m| m.to_png()) {
            Ok(png) => {
                let rel = format!("{GALLERY_DIR}/{scan_id}.png");
                let path = out.join(&rel);
                fs::write(&path, png).map_err(io_err(&path))?;
                result.outputs.montage = Some(rel);
            }
            Err(e) => result.warnings.push(format!("montage_skipped: {e}")),
        }
    }
    Ok(result)
}

fn crop_stage(
    config: &PipelineConfig,
    scan_id: &str,
    volume: &Volume,
    result: &mut ScanResult,
) -> Result<(), PipelineError> {
    let mask = match lung_mask(volume, &LungMaskParams::default()) {
        Ok(m) => m,
        Err(RoiError::EmptyMask) => {
            result.warnings.push(WARN_EMPTY_LUNG_MASK.into());
            return Ok(());
        }
        Err(e) => {
            result.warnings.push(format!("crop_failed: {e}"));
            return Ok(());
        }
    };
    if mask.component_count == 1 {
        result.warnings.push(WARN_SINGLE_LUNG.into());
    }
    match crop_roi(volume, &mask, config.crop_margin) {
        Ok(roi) => {
            let rel = format!("{ROI_DIR}/{scan_id}.nii.gz");
            let path = config.output_root.join(&rel);
            write_nifti_file(&path, &roi).map_err(|e| PipelineError::Io {
                path: path.clone(),
                source: io::Error::other(e.to_string()),
            })?;
            result.outputs.roi = Some(rel);
        }
        Err(e) => result.warnings.push(format!("crop_failed: {e}")),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScanState {
    digest: String,
    result: ScanResult,
}

fn state_path(config: &PipelineConfig, scan_id: &str) -> PathBuf {
    config.output_root.join(STATE_DIR).join(format!("{scan_id}.json"))
}

/// A previous result is reused when its digest matches and its outputs
/// still exist.
fn load_state(config: &PipelineConfig, scan_id: &str, digest: &str) -> Option<ScanResult> {
    let text = fs::read_to_string(state_path(config, scan_id)).ok()?;
    let state: ScanState = serde_json::from_str(&text).ok()?;
    let o = &state.result.outputs;
    let present = [&o.nifti, &o.roi, &o.montage]
        .into_iter()
        .flatten()
        .all(|rel| config.output_root.join(rel).is_file());
    (state.digest == digest && present).then_some(state.result)
}

fn save_state(config: &PipelineConfig, digest: &str, result: &ScanResult) -> Result<(), PipelineError> {
    let path = state_path(config, &result.scan_id);
    let state = ScanState {
        digest: digest.to_string(),
        result: result.clone(),
    };
    let json = serde_json::to_string_pretty(&state).map_err(ReportError::from)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, json).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

/// Results of a session, each flagged when reused from a previous run.
fn run_session(config: &PipelineConfig, session: &Session) -> Result<Vec<(ScanResult, bool)>, PipelineError> {
    let fingerprint = config.scan_fingerprint();
    let parsed = parse_session(session, &fingerprint)?;
    let digest = parsed.digest.clone();
    if let Some(error) = parsed.error.clone() {
        if config.resume {
            if let Some(r) = load_state(config, &session.id, &digest) {
                return Ok(vec![(r, true)]);
            }
        }
        let r = error_result(&session.id, session, None, error);
        save_state(config, &digest, &r)?;
        return Ok(vec![(r, false)]);
    }
    let mut results = Vec::new();
    for (scan_id, uid, headers) in select_series(session, parsed, config.selection) {
        if config.resume {
            if let Some(r) = load_state(config, &scan_id, &digest) {
                results.push((r, true));
                continue;
            }
        }
        let r = process_scan(config, session, &scan_id, uid, headers)?;
        save_state(config, &digest, &r)?;
        results.push((r, false));
    }
    Ok(results)
}

/// Hooks for callers that need to observe or stop a run.
#[derive(Default)]
pub struct RunControl<'a> {
    /// Checked before each session starts; when set, the run stops without
    /// writing a report.
    pub cancel: Option<&'a AtomicBool>,
    /// Called after each session's results are saved.
    pub on_session_done: Option<&'a (dyn Fn(&str) + Sync)>,
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: QaReport,
    /// Scans reused from a previous run.
    pub resumed: usize,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<QaReport, PipelineError> {
    run_pipeline_with(config, &RunControl::default()).map(|s| s.report)
}

pub fn run_pipeline_with(config: &PipelineConfig, control: &RunControl) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    if !config.input_root.is_dir() {
        return Err(ConfigInvalid(format!("input root {} is not a directory", config.input_root.display())).into());
    }
    let out = &config.output_root;
    for d in [NIFTI_DIR, ROI_DIR, GALLERY_DIR, STATE_DIR] {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let sessions = discover_sessions(&config.input_root, Some(out))?;

    let completed = std::sync::atomic::AtomicUsize::new(0);
    let work = || -> Result<Vec<Vec<(ScanResult, bool)>>, PipelineError> {
        sessions
            .par_iter()
            .map(|s| {
                if control.cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                    return Err(PipelineError::Interrupted {
                        completed: completed.load(Ordering::SeqCst),
                    });
                }
                let results = run_session(config, s)?;
                completed.fetch_add(1, Ordering::SeqCst);
                if let Some(hook) = control.on_session_done {
                    hook(&s.id);
                }
                Ok(results)
            })
            .collect()
    };
    let per_session = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| ConfigInvalid(format!("worker pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    let flat: Vec<(ScanResult, bool)> = per_session.into_iter().flatten().collect();
    let resumed = flat.iter().filter(|(_, reused)| *reused).count();
    let results: Vec<ScanResult> = flat.into_iter().map(|(r, _)| r).collect();

    let ids: Vec<String> = results.iter().map(|r| r.scan_id.clone()).collect();
    let context = ReportContext {
        corpus_id: config
            .corpus_id
            .clone()
            .unwrap_or_else(|| default_corpus_id(&config.input_root)),
        generated_at: config.now().to_rfc3339_opts(SecondsFormat::Secs, true),
        thresholds: config.thresholds.clone(),
        review: ReviewSampling {
            seed: config.review_seed,
            requested: config.review_sample_size,
            sampled: sample_for_review(&ids, config.review_sample_size, config.review_seed),
        },
        fov_bin_mm: DEFAULT_FOV_BIN_MM,
        spacing_bin_mm: DEFAULT_SPACING_BIN_MM,
    };
    let verdicts = read_verdicts(&out.join(VERDICTS_FILE))?;
    let report = aggregate(&context, results, &verdicts)?;
    export(&report, out)?;
    write_gallery_index(&report, out)?;
    let resolved = serde_json::to_string_pretty(config).map_err(ReportError::from)? + "\n";
    let p = out.join(PIPELINE_FILE);
    fs::write(&p, resolved).map_err(io_err(&p))?;
    Ok(RunSummary { report, resumed })
}

fn default_corpus_id(root: &Path) -> String {
    root.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

/// Writes `gallery/index.html` for the scans in the report.
pub fn write_gallery_index(report: &QaReport, out: &Path) -> Result<PathBuf, PipelineError> {
    let entries: Vec<IndexEntry> = report
        .scan_records
        .iter()
        .map(|r| IndexEntry {
            scan_id: r.scan_id().to_string(),
            montage_path: r.scan.outputs.montage.as_ref().map(|_| format!("{}.png", r.scan_id())),
            findings: r.scan.findings.clone(),
        })
        .collect();
    let dir = out.join(GALLERY_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(INDEX_FILE);
    fs::write(&path, build_index(&entries)).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_files() {
        assert!(is_candidate(Path::new("a/IM0001")));
        assert!(is_candidate(Path::new("a/x.DCM")));
        assert!(is_candidate(Path::new("a/x.ima")));
        assert!(!is_candidate(Path::new("a/truth.json")));
        assert!(!is_candidate(Path::new("a/.DS_Store")));
    }

    #[test]
    fn ids_are_sanitized() {
        assert_eq!(sanitize_id("p01/s 2"), "p01_s_2");
        assert_eq!(sanitize_id("1.2.840-x_y"), "1.2.840-x_y");
    }

    #[test]
    fn sessions_are_leaf_directories_with_files() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        for (d, f) in [
            ("p1/s1", "a.dcm"),
            ("p1/s2", "IM1"),
            ("p2", "b.dcm"),
            ("p3", "notes.txt"),
        ] {
            fs::create_dir_all(root.join(d)).unwrap();
            fs::write(root.join(d).join(f), b"x").unwrap();
        }
        let s = discover_sessions(&root, None).unwrap();
        let ids: Vec<&str> = s.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["p1__s1", "p1__s2", "p2"]);
        assert_eq!(s[0].rel_dir, "p1/s1");
    }
}
