//! Ground-truth-labeled synthetic CT series: an analytic ellipsoid phantom
//! written as explicit-VR DICOM, and defect injection with the findings each
//! defect entails.
//!
//! Every voxel is sampled from a fixed canonical grid (x by column, y by
//! row, z by slice), whatever the stored orientation, so an orientation
//! variant reoriented to the standard order reproduces the clean volume
//! exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::{format_ds, format_ds_list, tags, DicomWriter, ElementValue, SliceHeader};
use crate::findings::{CheckId, QaThresholds, WARN_EMPTY_LUNG_MASK};
use crate::geometry::Vec3;

const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";
/// Stored value = HU - RESCALE_INTERCEPT.
pub const RESCALE_INTERCEPT: f64 = -1024.0;
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("incompatible defect: {0}")]
    IncompatibleDefect(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("truth record: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the canonical grid is laid out in the stored files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceOrientation {
    /// Rows along +y, columns along +x.
    Axial,
    /// Columns run toward -x.
    FlipX,
    /// Rows along +x, columns along +y.
    SwapXy,
}

impl SliceOrientation {
    fn cosines(self) -> [f64; 6] {
        match self {
            SliceOrientation::Axial => [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            SliceOrientation::FlipX => [-1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            SliceOrientation::SwapXy => [0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesGeometry {
    /// Canonical grid size along y.
    pub rows: u32,
    /// Canonical grid size along x.
    pub columns: u32,
    /// Canonical (y, x) spacing in mm.
    pub pixel_spacing: [f64; 2],
    pub slice_count: usize,
    pub slice_step: f64,
    /// z of the first slice (mm).
    pub z_start: f64,
    pub orientation: SliceOrientation,
}

impl SeriesGeometry {
    /// Small chest-like series used for fast corpora: 96 x 96 at 0.75 mm,
    /// 100 slices every 2.5 mm.
    pub fn compact() -> Self {
        Self {
            rows: 96,
            columns: 96,
            pixel_spacing: [0.75, 0.75],
            slice_count: 100,
            slice_step: 2.5,
            z_start: 0.0,
            orientation: SliceOrientation::Axial,
        }
    }

    /// Clinical-size chest series: 512 x 512 at 0.7 mm, 100 slices every 2.5 mm.
    pub fn chest() -> Self {
        Self {
            rows: 512,
            columns: 512,
            pixel_spacing: [0.7, 0.7],
            ..Self::compact()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidGeometry(m.into()));
        if self.rows == 0 || self.columns == 0 || self.slice_count == 0 {
            return bad("dimensions must be positive");
        }
        if self.rows > 4096 || self.columns > 4096 {
            return bad("matrix larger than 4096");
        }
        let spacings = [self.pixel_spacing[0], self.pixel_spacing[1], self.slice_step];
        if spacings.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return bad("spacings must be positive and finite");
        }
        if !self.z_start.is_finite() {
            return bad("z_start must be finite");
        }
        Ok(())
    }

    /// Field of view (x, y) in mm.
    pub fn fov(&self) -> [f64; 2] {
        [
            f64::from(self.columns) * self.pixel_spacing[1],
            f64::from(self.rows) * self.pixel_spacing[0],
        ]
    }

    pub fn physical_length(&self) -> f64 {
        (self.slice_count as f64 - 1.0) * self.slice_step
    }

    /// Patient (LPS) coordinates of canonical grid point (i, j, k).
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let x0 = -(f64::from(self.columns) - 1.0) / 2.0 * self.pixel_spacing[1];
        let y0 = -(f64::from(self.rows) - 1.0) / 2.0 * self.pixel_spacing[0];
        [
            x0 + i as f64 * self.pixel_spacing[1],
            y0 + j as f64 * self.pixel_spacing[0],
            self.z_start + k as f64 * self.slice_step,
        ]
    }

    fn voxel_volume(&self) -> f64 {
        self.pixel_spacing[0] * self.pixel_spacing[1] * self.slice_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: Vec3,
}

impl Ellipsoid {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }

    fn z_range(&self) -> (f64, f64) {
        (self.center[2] - self.semi_axes[2], self.center[2] + self.semi_axes[2])
    }
}

/// Body ellipsoid in air with lung ellipsoids inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub air_hu: f64,
    pub body_hu: f64,
    pub lung_hu: f64,
    pub body: Ellipsoid,
    pub lungs: Vec<Ellipsoid>,
}

impl PhantomParams {
    /// Two-lung chest phantom scaled to the in-plane field of view. The lungs
    /// span z = 45..205 mm.
    pub fn chest(geometry: &SeriesGeometry) -> Self {
        let [fx, fy] = geometry.fov();
        let lung = |side: f64| Ellipsoid {
            center: [side * 0.19 * fx, 0.0, 125.0],
            semi_axes: [0.14 * fx, 0.22 * fy, 80.0],
        };
        Self {
            air_hu: -1000.0,
            body_hu: 0.0,
            lung_hu: -800.0,
            body: Ellipsoid {
                center: [0.0, 0.0, 0.0],
                semi_axes: [0.44 * fx, 0.36 * fy, 1.0e4],
            },
            lungs: vec![lung(-1.0), lung(1.0)],
        }
    }

    pub fn single_lung(geometry: &SeriesGeometry) -> Self {
        let mut p = Self::chest(geometry);
        p.lungs.truncate(1);
        p
    }

    pub fn hu_at(&self, p: Vec3) -> f64 {
        if self.lungs.iter().any(|l| l.contains(p)) {
            self.lung_hu
        } else if self.body.contains(p) {
            self.body_hu
        } else {
            self.air_hu
        }
    }

    pub fn in_lung(&self, p: Vec3) -> bool {
        self.lungs.iter().any(|l| l.contains(p))
    }
}

/// Defect classes, with their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefectKind {
    /// Remove `count` non-adjacent interior slices.
    DropSlices {
        count: usize,
    },
    /// Copy `length` consecutive slices. Copies keep their instance numbers,
    /// or with `renumber` are appended with new ones after the last slice.
    DuplicateChunk {
        length: usize,
        renumber: bool,
    },
    /// Keep only the first `keep` slices.
    Truncate {
        keep: usize,
    },
    /// Extend the scan so its physical length exceeds the upper bound.
    WholeBodyLength {
        slice_count: Option<usize>,
    },
    NonstandardOrientation {
        variant: SliceOrientation,
    },
    /// Slice step above the z resolution bound; slice count chosen to keep
    /// the other checks passing.
    CoarseResolution {
        slice_step: f64,
    },
    /// Start the scan inside the lungs so that both touch the volume border.
    PartialLung {
        z_start: Option<f64>,
    },
    /// Cut one file in the middle of its pixel data.
    UnparseableBytes {
        file_index: Option<usize>,
    },
}

impl DefectKind {
    pub fn class_name(&self) -> &'static str {
        match self {
            DefectKind::DropSlices { .. } => "drop_slices",
            DefectKind::DuplicateChunk { .. } => "duplicate_chunk",
            DefectKind::Truncate { .. } => "truncate",
            DefectKind::WholeBodyLength { .. } => "whole_body_length",
            DefectKind::NonstandardOrientation { .. } => "nonstandard_orientation",
            DefectKind::CoarseResolution { .. } => "coarse_resolution",
            DefectKind::PartialLung { .. } => "partial_lung",
            DefectKind::UnparseableBytes { .. } => "unparseable_bytes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    #[serde(flatten)]
    pub kind: DefectKind,
    pub seed: u64,
}

/// What the pipeline must report for a series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFindings {
    /// Checks that must fail, with their exact value.
    pub failing: BTreeMap<CheckId, i64>,
    /// Checks that cannot be evaluated.
    pub not_applicable: BTreeSet<CheckId>,
    /// Failing checks repaired in place.
    pub auto_fixed: BTreeSet<CheckId>,
    pub warnings: BTreeSet<String>,
    /// Scan-level error class (e.g. "unparseable").
    pub scan_error: Option<String>,
    /// Why each entry above follows from the defect.
    pub entailments: Vec<String>,
}

impl ExpectedFindings {
    fn fail(&mut self, check: CheckId, value: i64, why: impl Into<String>) {
        self.failing.insert(check, value);
        self.entailments.push(format!("{check}: {}", why.into()));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub name: String,
    pub seed: u64,
    pub series_uid: String,
    pub study_uid: String,
    pub geometry: SeriesGeometry,
    pub phantom: PhantomParams,
    pub defect: Option<DefectSpec>,
    /// Header of every file in the series, keyed by file name in
    /// `source_path`. Files altered to be unparseable are omitted.
    pub slices: Vec<SliceHeader>,
    /// Canonical grid points inside a lung.
    pub lung_voxel_count: usize,
    pub lung_volume_mm3: f64,
    /// Sum of the lung ellipsoid volumes when every lung lies inside the
    /// scanned z range.
    pub analytic_lung_volume_mm3: Option<f64>,
    pub expected: ExpectedFindings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SynthSeries {
    pub files: Vec<SynthFile>,
    pub truth: TruthRecord,
    /// Files taken out by the defect, kept so the injection can be undone.
    pub removed: Vec<SynthFile>,
}

impl SynthSeries {
    /// Writes the files and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        for f in &self.files {
            fs::write(dir.join(&f.name), &f.bytes)?;
        }
        let json = serde_json::to_string_pretty(&self.truth)?;
        fs::write(dir.join(TRUTH_FILE), json + "\n")?;
        Ok(())
    }

    /// Puts removed files back (undoes slice dropping).
    pub fn restored(&self) -> SynthSeries {
        let mut files = self.files.clone();
        files.extend(self.removed.iter().cloned());
        files.sort_by(|a, b| a.name.cmp(&b.name));
        SynthSeries {
            files,
            truth: self.truth.clone(),
            removed: Vec::new(),
        }
    }
}

fn uid(rng: &mut ChaCha8Rng) -> String {
    let hi: u64 = rng.random();
    let lo: u64 = rng.random();
    format!("2.25.{}", (u128::from(hi) << 64) | u128::from(lo))
}

/// SplitMix64 step, used to derive independent child seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writer preloaded with every element the parser reads, for one slice with
/// 16-bit unsigned stored values.
pub fn slice_writer(header: &SliceHeader, sop_instance_uid: &str, stored: &[u16]) -> DicomWriter {
    let mut w = DicomWriter::new();
    w.text(tags::SOP_CLASS_UID, CT_IMAGE_STORAGE)
        .text(tags::SOP_INSTANCE_UID, sop_instance_uid)
        .text(tags::MODALITY, "CT")
        .text(tags::SERIES_INSTANCE_UID, header.series_uid.clone())
        .text(tags::INSTANCE_NUMBER, header.instance_number.to_string())
        .u16(tags::SAMPLES_PER_PIXEL, 1)
        .text(tags::PHOTOMETRIC_INTERPRETATION, "MONOCHROME2")
        .u16(tags::ROWS, header.rows as u16)
        .u16(tags::COLUMNS, header.columns as u16)
        .text(tags::PIXEL_SPACING, format_ds_list(&header.pixel_spacing))
        .u16(tags::BITS_ALLOCATED, 16)
        .u16(tags::BITS_STORED, 16)
        .u16(tags::HIGH_BIT, 15)
        .u16(tags::PIXEL_REPRESENTATION, 0)
        .text(tags::RESCALE_INTERCEPT, format_ds(header.rescale_intercept))
        .text(tags::RESCALE_SLOPE, format_ds(header.rescale_slope));
    if let Some(study) = &header.study_uid {
        w.text(tags::STUDY_INSTANCE_UID, study.clone());
    }
    if let Some(t) = header.slice_thickness {
        w.text(tags::SLICE_THICKNESS, format_ds(t));
    }
    if let Some(p) = header.image_position {
        w.text(tags::IMAGE_POSITION_PATIENT, format_ds_list(&p));
    }
    if let Some(o) = header.image_orientation {
        w.text(tags::IMAGE_ORIENTATION_PATIENT, format_ds_list(&o));
    }
    if let Some(l) = header.slice_location {
        w.text(tags::SLICE_LOCATION, format_ds(l));
    }
    let bytes: Vec<u8> = stored.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.set(tags::PIXEL_DATA, ElementValue::Bytes(bytes));
    w
}

fn slice_file_name(index: usize) -> String {
    format!("slice_{:04}.dcm", index + 1)
}

struct Generated {
    files: Vec<SynthFile>,
    headers: Vec<SliceHeader>,
}

fn render_slices(geometry: &SeriesGeometry, phantom: &PhantomParams, series_uid: &str, study_uid: &str) -> Generated {
    let nx = geometry.columns as usize;
    let ny = geometry.rows as usize;
    let [dy, dx] = geometry.pixel_spacing;
    let (file_rows, file_cols, spacing) = match geometry.orientation {
        SliceOrientation::SwapXy => (nx, ny, [dx, dy]),
        _ => (ny, nx, [dy, dx]),
    };
    let mut files = Vec::with_capacity(geometry.slice_count);
    let mut headers = Vec::with_capacity(geometry.slice_count);
    for k in 0..geometry.slice_count {
        let canonical = |r: usize, c: usize| -> (usize, usize) {
            match geometry.orientation {
                SliceOrientation::Axial => (c, r),
                SliceOrientation::FlipX => (nx - 1 - c, r),
                SliceOrientation::SwapXy => (r, c),
            }
        };
        let mut stored = Vec::with_capacity(file_rows * file_cols);
        for r in 0..file_rows {
            for c in 0..file_cols {
                let (i, j) = canonical(r, c);
                let hu = phantom.hu_at(geometry.world(i, j, k));
                stored.push((hu - RESCALE_INTERCEPT).round().clamp(0.0, 65535.0) as u16);
            }
        }
        let (i0, j0) = canonical(0, 0);
        let position = geometry.world(i0, j0, k);
        let name = slice_file_name(k);
        let header = SliceHeader {
            source_path: name.clone(),
            series_uid: series_uid.to_string(),
            study_uid: Some(study_uid.to_string()),
            instance_number: k as i64 + 1,
            slice_location: Some(position[2]),
            image_position: Some(position),
            image_orientation: Some(geometry.orientation.cosines()),
            pixel_spacing: spacing,
            slice_thickness: Some(geometry.slice_step),
            rows: file_rows as u32,
            columns: file_cols as u32,
            bits_allocated: 16,
            pixel_representation: 0,
            rescale_slope: 1.0,
            rescale_intercept: RESCALE_INTERCEPT,
        };
        let sop = format!("{series_uid}.{}", k + 1);
        let bytes = slice_writer(&header, &sop, &stored).to_bytes();
        files.push(SynthFile { name, bytes });
        headers.push(header);
    }
    Generated { files, headers }
}

fn lung_stats(geometry: &SeriesGeometry, phantom: &PhantomParams) -> (usize, Option<f64>) {
    let mut count = 0;
    for k in 0..geometry.slice_count {
        for j in 0..geometry.rows as usize {
            for i in 0..geometry.columns as usize {
                if phantom.in_lung(geometry.world(i, j, k)) {
                    count += 1;
                }
            }
        }
    }
    let z_lo = geometry.z_start;
    let z_hi = geometry.z_start + geometry.physical_length();
    let contained = phantom.lungs.iter().all(|l| {
        let (a, b) = l.z_range();
        a >= z_lo && b <= z_hi
    });
    let analytic = contained.then(|| phantom.lungs.iter().map(Ellipsoid::volume).sum());
    (count, analytic)
}

/// Findings entailed by the geometry alone: slice count, physical length
/// and voxel size.
fn geometry_expectations(geometry: &SeriesGeometry, thresholds: &QaThresholds, expected: &mut ExpectedFindings) {
    let n = geometry.slice_count;
    if n < thresholds.delta {
        expected.fail(CheckId::C4, 1, format!("{n} slices < delta {}", thresholds.delta));
    }
    let pl = geometry.physical_length();
    if !(thresholds.sigma1 < pl && pl < thresholds.sigma2) {
        expected.fail(
            CheckId::C5,
            0,
            format!("length {pl} mm outside ({}, {})", thresholds.sigma1, thresholds.sigma2),
        );
    }
    if n < 2 {
        expected.not_applicable.insert(CheckId::C3);
    }
    let sizes = [
        geometry.pixel_spacing[1],
        geometry.pixel_spacing[0],
        geometry.slice_step,
    ];
    let mut coarse = 0;
    for a in 0..3 {
        if sizes[a] > thresholds.phi[a] {
            coarse += 1;
        }
        if let Some(min) = thresholds.phi_min {
            if sizes[a] < min[a] {
                coarse += 1;
            }
        }
    }
    if coarse > 0 {
        expected.fail(
            CheckId::C7,
            coarse,
            format!("voxel size {sizes:?} vs phi {:?}", thresholds.phi),
        );
    }
    if geometry.orientation != SliceOrientation::Axial {
        expected.fail(CheckId::C6, 0, format!("{:?} storage order", geometry.orientation));
        expected.auto_fixed.insert(CheckId::C6);
    }
}

/// Volume-level checks are not reached when C1..C4 fail.
fn apply_assembly_gate(expected: &mut ExpectedFindings) {
    let gated = [CheckId::C1, CheckId::C2, CheckId::C3, CheckId::C4]
        .iter()
        .any(|c| expected.failing.contains_key(c));
    if gated {
        for c in [CheckId::C6, CheckId::C7] {
            expected.failing.remove(&c);
            expected.auto_fixed.remove(&c);
            expected.not_applicable.insert(c);
        }
        expected
            .entailments
            .push("C6, C7: not applicable, volume assembly gated on C1-C4".into());
    }
}

/// Renders a series of the phantom. The truth record expects every check
/// the geometry entails under `QaThresholds::default()`; use
/// [`generate_series_with`] for other thresholds.
pub fn generate_series(
    geometry: &SeriesGeometry,
    phantom: &PhantomParams,
    seed: u64,
) -> Result<SynthSeries, SynthError> {
    generate_series_with(geometry, phantom, seed, &QaThresholds::default())
}

pub fn generate_series_with(
    geometry: &SeriesGeometry,
    phantom: &PhantomParams,
    seed: u64,
    thresholds: &QaThresholds,
) -> Result<SynthSeries, SynthError> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series_uid = uid(&mut rng);
    let study_uid = uid(&mut rng);
    let generated = render_slices(geometry, phantom, &series_uid, &study_uid);
    let (lung_voxel_count, analytic) = lung_stats(geometry, phantom);
    let mut expected = ExpectedFindings::default();
    geometry_expectations(geometry, thresholds, &mut expected);
    apply_assembly_gate(&mut expected);
    Ok(SynthSeries {
        files: generated.files,
        truth: TruthRecord {
            name: format!("series_{seed:016x}"),
            seed,
            series_uid,
            study_uid,
            geometry: geometry.clone(),
            phantom: phantom.clone(),
            defect: None,
            slices: generated.headers,
            lung_voxel_count,
            lung_volume_mm3: lung_voxel_count as f64 * geometry.voxel_volume(),
            analytic_lung_volume_mm3: analytic,
            expected,
        },
        removed: Vec::new(),
    })
}

fn incompatible(msg: impl Into<String>) -> SynthError {
    SynthError::IncompatibleDefect(msg.into())
}

/// `k` distinct interior indices of `0..n`, no two adjacent.
fn non_adjacent_interior(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Choose k gaps among n - 2 - (k - 1) slots, then spread them apart.
    let slots = n - 2 - (k - 1);
    let mut picks = sample(rng, slots, k).into_vec();
    picks.sort_unstable();
    picks.iter().enumerate().map(|(rank, p)| 1 + p + rank).collect()
}

/// Applies a defect to a clean series and records the findings it entails
/// under `thresholds`.
pub fn inject_defect(
    clean: &SynthSeries,
    spec: &DefectSpec,
    thresholds: &QaThresholds,
) -> Result<SynthSeries, SynthError> {
    if clean.truth.defect.is_some() {
        return Err(incompatible("input series already carries a defect"));
    }
    let geometry = &clean.truth.geometry;
    let n = clean.files.len();
    let step = geometry.slice_step;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let epsilon = thresholds.epsilon.resolve(step);
    let regenerate = |g: SeriesGeometry| generate_series_with(&g, &clean.truth.phantom, clean.truth.seed, thresholds);

    let mut out = match &spec.kind {
        DefectKind::DropSlices { count } => {
            let k = *count;
            if k == 0 || 3 * k >= n.saturating_sub(1) {
                return Err(incompatible(format!(
                    "cannot drop {k} of {n} slices and keep the modal spacing"
                )));
            }
            if epsilon >= step / 2.0 {
                return Err(incompatible("epsilon too large to detect a doubled gap"));
            }
            let dropped: BTreeSet<usize> = non_adjacent_interior(n, k, &mut rng).into_iter().collect();
            let mut s = clean.clone();
            s.files.clear();
            s.truth.slices.clear();
            for (idx, (f, h)) in clean.files.iter().zip(&clean.truth.slices).enumerate() {
                if dropped.contains(&idx) {
                    s.removed.push(f.clone());
                } else {
                    s.files.push(f.clone());
                    s.truth.slices.push(h.clone());
                }
            }
            let mut e = ExpectedFindings::default();
            e.fail(CheckId::C1, k as i64, format!("{k} instance numbers missing"));
            e.fail(CheckId::C3, k as i64, format!("{k} gaps of twice the modal spacing"));
            let g = SeriesGeometry {
                slice_count: n - k,
                ..geometry.clone()
            };
            // Interior drops keep the physical length.
            geometry_expectations(
                &SeriesGeometry {
                    slice_count: n,
                    ..g.clone()
                },
                thresholds,
                &mut e,
            );
            if g.slice_count < thresholds.delta {
                e.fail(CheckId::C4, 1, "too few slices after dropping");
            }
            s.truth.expected = e;
            s
        }
        DefectKind::DuplicateChunk { length, renumber } => {
            let m = *length;
            if m == 0 || m + 1 >= n {
                return Err(incompatible(format!("chunk of {m} does not fit {n} slices")));
            }
            if epsilon >= step / 2.0 {
                return Err(incompatible("epsilon too large to detect a zero gap"));
            }
            let start = rng.random_range(0..n - m);
            let mut s = clean.clone();
            let mut e = ExpectedFindings::default();
            for offset in 0..m {
                let idx = start + offset;
                let mut h = clean.truth.slices[idx].clone();
                let name = if *renumber {
                    let new_in = (n + offset + 1) as i64;
                    h.instance_number = new_in;
                    let name = format!("slice_{new_in:04}_dup.dcm");
                    let bytes = renumbered(&clean.files[idx].bytes, new_in)?;
                    s.files.push(SynthFile {
                        name: name.clone(),
                        bytes,
                    });
                    name
                } else {
                    let name = clean.files[idx].name.replace(".dcm", "_dup.dcm");
                    s.files.push(SynthFile {
                        name: name.clone(),
                        bytes: clean.files[idx].bytes.clone(),
                    });
                    name
                };
                h.source_path = name;
                s.truth.slices.push(h);
            }
            s.files.sort_by(|a, b| a.name.cmp(&b.name));
            s.truth.slices.sort_by(|a, b| a.source_path.cmp(&b.source_path));
            if *renumber {
                e.fail(CheckId::C3, 2, "one backward jump violates both distance terms");
            } else {
                if m + 1 >= n - 1 {
                    return Err(incompatible("zero distances would become the modal spacing"));
                }
                e.fail(CheckId::C1, -(m as i64), format!("{m} surplus instance numbers"));
                e.fail(CheckId::C2, m as i64, format!("{m} duplicated instance numbers"));
                e.fail(
                    CheckId::C3,
                    2 * m as i64,
                    format!("{m} zero distances, each below tolerance and off-modal"),
                );
            }
            let g = SeriesGeometry {
                slice_count: n + m,
                ..geometry.clone()
            };
            if g.slice_count < thresholds.delta {
                e.fail(CheckId::C4, 1, "too few slices");
            }
            let pl = geometry.physical_length();
            if !(thresholds.sigma1 < pl && pl < thresholds.sigma2) {
                e.fail(CheckId::C5, 0, "length unchanged and out of bounds");
            }
            s.truth.expected = e;
            s
        }
        DefectKind::Truncate { keep } => {
            let keep = *keep;
            if keep == 0 || keep >= thresholds.delta || keep > n {
                return Err(incompatible(format!(
                    "truncation to {keep} must leave between 1 and delta - 1 of {n} slices"
                )));
            }
            let mut s = clean.clone();
            s.removed = s.files.split_off(keep);
            s.truth.slices.truncate(keep);
            let mut e = ExpectedFindings::default();
            geometry_expectations(
                &SeriesGeometry {
                    slice_count: keep,
                    ..geometry.clone()
                },
                thresholds,
                &mut e,
            );
            s.truth.expected = e;
            s
        }
        DefectKind::WholeBodyLength { slice_count } => {
            let count = slice_count.unwrap_or((thresholds.sigma2 / step).floor() as usize + 2);
            let g = SeriesGeometry {
                slice_count: count,
                ..geometry.clone()
            };
            if g.physical_length() <= thresholds.sigma2 {
                return Err(incompatible("length does not exceed the upper bound"));
            }
            regenerate(g)?
        }
        DefectKind::NonstandardOrientation { variant } => {
            if *variant == SliceOrientation::Axial {
                return Err(incompatible("axial storage is the standard orientation"));
            }
            if *variant == SliceOrientation::SwapXy && geometry.pixel_spacing[0] != geometry.pixel_spacing[1] {
                // Still valid, but the swap is only reversible voxel-for-voxel
                // with square pixels; reject to keep the oracle exact.
                return Err(incompatible("axis swap needs square pixels"));
            }
            regenerate(SeriesGeometry {
                orientation: *variant,
                ..geometry.clone()
            })?
        }
        DefectKind::CoarseResolution { slice_step } => {
            let s = *slice_step;
            if s <= thresholds.phi[2] {
                return Err(incompatible("slice step does not exceed phi_z"));
            }
            let count = thresholds.delta.max((thresholds.sigma1 / s).floor() as usize + 2);
            let g = SeriesGeometry {
                slice_count: count,
                slice_step: s,
                ..geometry.clone()
            };
            if g.physical_length() >= thresholds.sigma2 {
                return Err(incompatible("no slice count satisfies both delta and sigma2"));
            }
            regenerate(g)?
        }
        DefectKind::PartialLung { z_start } => {
            let lungs = &clean.truth.phantom.lungs;
            let z = z_start.unwrap_or_else(|| lungs.iter().map(|l| l.center[2]).fold(f64::MIN, f64::max));
            let g = SeriesGeometry {
                z_start: z,
                ..geometry.clone()
            };
            let top = z + g.physical_length();
            let cut = lungs.iter().all(|l| {
                let (a, b) = l.z_range();
                (a < z && z < b) || (a < top && top < b)
            });
            if !cut {
                return Err(incompatible("scan range does not cut every lung"));
            }
            let mut s = regenerate(g)?;
            s.truth.expected.warnings.insert(WARN_EMPTY_LUNG_MASK.to_string());
            s.truth
                .expected
                .entailments
                .push("every lung touches the volume border, so no ROI survives".into());
            s
        }
        DefectKind::UnparseableBytes { file_index } => {
            let idx = file_index.unwrap_or_else(|| rng.random_range(0..n));
            if idx >= n {
                return Err(incompatible(format!("file index {idx} out of range")));
            }
            let mut s = clean.clone();
            let f = &mut s.files[idx];
            let cut = f.bytes.len() / 2;
            f.bytes.truncate(cut);
            let name = f.name.clone();
            s.truth.slices.retain(|h| h.source_path != name);
            s.truth.expected = ExpectedFindings {
                not_applicable: CheckId::OBJECTIVE.into_iter().collect(),
                scan_error: Some("unparseable".into()),
                entailments: vec![format!("{name} cut to {cut} bytes inside pixel data")],
                ..Default::default()
            };
            s
        }
    };
    apply_assembly_gate(&mut out.truth.expected);
    out.truth.defect = Some(spec.clone());
    Ok(out)
}

/// Copy of a synthetic file under a new instance number.
fn renumbered(bytes: &[u8], instance_number: i64) -> Result<Vec<u8>, SynthError> {
    let (mut header, slab) = crate::dicom::parse_slice_with_pixels(bytes)
        .map_err(|e| incompatible(format!("cannot re-read synthetic file: {e}")))?;
    header.instance_number = instance_number;
    let stored: Vec<u16> = slab
        .values
        .iter()
        .map(|hu| (f64::from(*hu) - header.rescale_intercept).round() as u16)
        .collect();
    let sop = format!("{}.{instance_number}", header.series_uid);
    Ok(slice_writer(&header, &sop, &stored).to_bytes())
}

/// Defect classes whose detection is objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    DropSlices,
    DuplicateChunk,
    Truncate,
    WholeBodyLength,
    NonstandardOrientation,
    CoarseResolution,
    PartialLung,
    UnparseableBytes,
}

impl DefectClass {
    pub const OBJECTIVE: [DefectClass; 6] = [
        DefectClass::DropSlices,
        DefectClass::DuplicateChunk,
        DefectClass::Truncate,
        DefectClass::WholeBodyLength,
        DefectClass::NonstandardOrientation,
        DefectClass::CoarseResolution,
    ];

    /// Draws concrete parameters for one instance of the class.
    pub fn sample(self, rng: &mut ChaCha8Rng, geometry: &SeriesGeometry, thresholds: &QaThresholds) -> DefectKind {
        match self {
            DefectClass::DropSlices => DefectKind::DropSlices {
                count: rng.random_range(1..=3),
            },
            DefectClass::DuplicateChunk => DefectKind::DuplicateChunk {
                length: rng.random_range(1..=5),
                renumber: false,
            },
            DefectClass::Truncate => DefectKind::Truncate {
                keep: rng.random_range(2..thresholds.delta.min(geometry.slice_count)),
            },
            DefectClass::WholeBodyLength => DefectKind::WholeBodyLength { slice_count: None },
            DefectClass::NonstandardOrientation => DefectKind::NonstandardOrientation {
                variant: if rng.random_bool(0.5) {
                    SliceOrientation::FlipX
                } else {
                    SliceOrientation::SwapXy
                },
            },
            DefectClass::CoarseResolution => DefectKind::CoarseResolution {
                slice_step: thresholds.phi[2] + [1.0, 2.0, 2.5][rng.random_range(0..3)],
            },
            DefectClass::PartialLung => DefectKind::PartialLung { z_start: None },
            DefectClass::UnparseableBytes => DefectKind::UnparseableBytes { file_index: None },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::DropSlices => "drop_slices",
            DefectClass::DuplicateChunk => "duplicate_chunk",
            DefectClass::Truncate => "truncate",
            DefectClass::WholeBodyLength => "whole_body_length",
            DefectClass::NonstandardOrientation => "nonstandard_orientation",
            DefectClass::CoarseResolution => "coarse_resolution",
            DefectClass::PartialLung => "partial_lung",
            DefectClass::UnparseableBytes => "unparseable_bytes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub geometry: SeriesGeometry,
    pub clean: usize,
    /// Series per defect class.
    pub defects: Vec<(DefectClass, usize)>,
    pub seed: u64,
    pub thresholds: QaThresholds,
}

impl CorpusSpec {
    /// 20 clean series plus 10 of each objective defect class.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            geometry: SeriesGeometry::compact(),
            clean: 20,
            defects: DefectClass::OBJECTIVE.iter().map(|c| (*c, 10)).collect(),
            seed,
            thresholds: QaThresholds::default(),
        }
    }

    /// (series name, defect class) for every series, in generation order.
    pub fn plan(&self) -> Vec<(String, Option<DefectClass>)> {
        let mut plan: Vec<(String, Option<DefectClass>)> =
            (0..self.clean).map(|i| (format!("clean_{i:03}"), None)).collect();
        for (class, count) in &self.defects {
            plan.extend((0..*count).map(|i| (format!("{}_{i:03}", class.name()), Some(*class))));
        }
        plan
    }
}

/// Generates one planned series of a corpus.
pub fn generate_planned(
    spec: &CorpusSpec,
    index: usize,
    name: &str,
    class: Option<DefectClass>,
) -> Result<SynthSeries, SynthError> {
    let seed = derive_seed(spec.seed, index as u64);
    let phantom = PhantomParams::chest(&spec.geometry);
    let clean = generate_series_with(&spec.geometry, &phantom, seed, &spec.thresholds)?;
    let mut series = match class {
        None => clean,
        Some(class) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let kind = class.sample(&mut rng, &spec.geometry, &spec.thresholds);
            let defect = DefectSpec {
                kind,
                seed: derive_seed(seed, 2),
            };
            inject_defect(&clean, &defect, &spec.thresholds)?
        }
    };
    series.truth.name = name.to_string();
    Ok(series)
}

/// Generates the corpus under `root`, one directory per series, in
/// parallel. Returns the truth records in plan order.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> Result<Vec<TruthRecord>, SynthError> {
    spec.geometry.validate()?;
    fs::create_dir_all(root)?;
    let plan = spec.plan();
    plan.par_iter()
        .enumerate()
        .map(|(index, (name, class))| {
            let series = generate_planned(spec, index, name, *class)?;
            series.write_to(&root.join(name))?;
            Ok(series.truth)
        })
        .collect()
}

pub fn read_truth(dir: &Path) -> Result<TruthRecord, SynthError> {
    let text = fs::read_to_string(dir.join(TRUTH_FILE))?;
    Ok(serde_json::from_str(&text)?)
}
