//! DICOM-level checks over one series: instance numbers (C1, C2), slice
//! distance (C3), slice count (C4) and physical length (C5).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::SliceHeader;
use crate::findings::{CheckId, QaFinding, QaThresholds};
use crate::geometry::dot;

/// Detail strings list at most this many offending values.
const DETAIL_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("empty series")]
    EmptySeries,
    #[error("mixed series: {0} and {1}")]
    MixedSeries(String, String),
    #[error("no usable slice geometry (slice location or image position on every slice)")]
    NoGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub series_uid: String,
    /// Sorted by instance number; ties keep input order.
    pub slices: Vec<SliceHeader>,
    pub slice_count: usize,
    /// Scalar position of each slice (mm), parallel to `slices`.
    pub positions: Vec<f64>,
    /// `positions[i + 1] - positions[i]`, in instance-number order.
    pub slice_distances: Vec<f64>,
    pub modal_spacing: f64,
    pub physical_length: f64,
}

impl SeriesManifest {
    pub fn instance_numbers(&self) -> Vec<i64> {
        self.slices.iter().map(|s| s.instance_number).collect()
    }
}

/// Per-slice scalar positions: slice location when every slice has one,
/// otherwise image position projected on the slice normal.
pub fn slice_positions(slices: &[SliceHeader]) -> Result<Vec<f64>, SeriesError> {
    if slices.iter().all(|s| s.slice_location.is_some()) {
        return Ok(slices.iter().map(|s| s.slice_location.unwrap_or_default()).collect());
    }
    if slices.iter().all(|s| s.image_position.is_some()) {
        let normal = slices
            .iter()
            .find(|s| s.image_orientation.is_some())
            .map_or([0.0, 0.0, 1.0], SliceHeader::slice_normal);
        return Ok(slices
            .iter()
            .map(|s| dot(s.image_position.unwrap_or_default(), normal))
            .collect());
    }
    Err(SeriesError::NoGeometry)
}

/// Most frequent |distance| after rounding to 1e-3 mm; ties go to the
/// smaller spacing. Zero when there are no distances.
pub fn modal_spacing(distances: &[f64]) -> f64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for d in distances {
        *counts.entry((d.abs() * 1000.0).round() as i64).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (key, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((key, count));
        }
    }
    best.map_or(0.0, |(key, _)| key as f64 / 1000.0)
}

pub fn physical_length(positions: &[f64]) -> f64 {
    let max = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = positions.iter().copied().fold(f64::INFINITY, f64::min);
    if positions.is_empty() {
        0.0
    } else {
        max - min
    }
}

fn sort_by_instance(mut headers: Vec<SliceHeader>) -> Vec<SliceHeader> {
    headers.sort_by_key(|h| h.instance_number);
    headers
}

pub fn build_manifest(headers: Vec<SliceHeader>) -> Result<SeriesManifest, SeriesError> {
    let first = headers.first().ok_or(SeriesError::EmptySeries)?;
    if let Some(other) = headers.iter().find(|h| h.series_uid != first.series_uid) {
        return Err(SeriesError::MixedSeries(
            first.series_uid.clone(),
            other.series_uid.clone(),
        ));
    }
    let series_uid = first.series_uid.clone();
    let slices = sort_by_instance(headers);
    let positions = slice_positions(&slices)?;
    let slice_distances: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(SeriesManifest {
        series_uid,
        slice_count: slices.len(),
        modal_spacing: modal_spacing(&slice_distances),
        physical_length: physical_length(&positions),
        slices,
        positions,
        slice_distances,
    })
}

/// C1 = max - min + 1 - count.
pub fn missing_instance_count(instance_numbers: &[i64]) -> i64 {
    let (Some(max), Some(min)) = (instance_numbers.iter().max(), instance_numbers.iter().min()) else {
        return 0;
    };
    max - min + 1 - instance_numbers.len() as i64
}

/// C2 = number of index pairs i < j with equal instance numbers.
pub fn duplicate_pair_count(instance_numbers: &[i64]) -> i64 {
    let mut counts: BTreeMap<i64, i64> = BTreeMap::new();
    for n in instance_numbers {
        *counts.entry(*n).or_default() += 1;
    }
    counts.values().map(|k| k * (k - 1) / 2).sum()
}

fn limited_list<T: ToString>(items: impl Iterator<Item = T>, total: usize) -> String {
    let mut parts: Vec<String> = items.take(DETAIL_LIMIT).map(|v| v.to_string()).collect();
    if total > DETAIL_LIMIT {
        parts.push(format!("... ({total} total)"));
    }
    parts.join(", ")
}

/// Findings for C1 and C2 from a list of instance numbers.
pub fn instance_number_findings(instance_numbers: &[i64]) -> (QaFinding, QaFinding) {
    let c1 = missing_instance_count(instance_numbers);
    let c2 = duplicate_pair_count(instance_numbers);

    let mut distinct: Vec<i64> = instance_numbers.to_vec();
    distinct.sort_unstable();
    let mut duplicated: Vec<i64> = distinct.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]).collect();
    duplicated.dedup();
    distinct.dedup();

    let mut missing_total = 0usize;
    let mut missing = Vec::new();
    for w in distinct.windows(2) {
        let gap = (w[1] - w[0] - 1) as usize;
        missing_total += gap;
        let mut v = w[0] + 1;
        while v < w[1] && missing.len() < DETAIL_LIMIT {
            missing.push(v);
            v += 1;
        }
    }

    let c1_detail = if missing_total == 0 && c1 == 0 {
        "instance numbers contiguous".to_string()
    } else {
        format!(
            "missing instance numbers: [{}]",
            limited_list(missing.iter(), missing_total)
        )
    };
    let c2_detail = if duplicated.is_empty() {
        "no duplicated instance numbers".to_string()
    } else {
        format!(
            "duplicated instance numbers: [{}]",
            limited_list(duplicated.iter(), duplicated.len())
        )
    };
    (
        QaFinding::evaluated(CheckId::C1, c1, c1_detail),
        QaFinding::evaluated(CheckId::C2, c2, c2_detail),
    )
}

/// Which term of the slice-distance check flagged a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceTerm {
    /// Distance below the tolerance (zero, negative or near-zero step).
    BelowTolerance,
    /// Distance deviates from the modal spacing by more than the tolerance.
    NonUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceViolation {
    pub index: usize,
    pub distance: f64,
    pub term: DistanceTerm,
}

/// +1 or -1: the sign of the majority of nonzero distances, so that series
/// stored with decreasing positions are checked along their own direction.
pub fn scan_direction(distances: &[f64]) -> f64 {
    let positive = distances.iter().filter(|d| **d > 0.0).count();
    let negative = distances.iter().filter(|d| **d < 0.0).count();
    if negative > positive {
        -1.0
    } else {
        1.0
    }
}

/// Both terms of the slice-distance check over direction-normalized distances.
/// The returned count is the C3 value.
pub fn slice_distance_violations(distances: &[f64], modal: f64, epsilon: f64) -> Vec<DistanceViolation> {
    let direction = scan_direction(distances);
    let mut out = Vec::new();
    for (index, raw) in distances.iter().enumerate() {
        let d = raw * direction;
        if d < epsilon {
            out.push(DistanceViolation {
                index,
                distance: d,
                term: DistanceTerm::BelowTolerance,
            });
        }
        if (d - modal).abs() > epsilon {
            out.push(DistanceViolation {
                index,
                distance: d,
                term: DistanceTerm::NonUniform,
            });
        }
    }
    out
}

pub fn check_instance_numbers(manifest: &SeriesManifest) -> (QaFinding, QaFinding) {
    instance_number_findings(&manifest.instance_numbers())
}

pub fn check_slice_distance(manifest: &SeriesManifest, thresholds: &QaThresholds) -> QaFinding {
    if manifest.slice_count < 2 {
        return QaFinding::not_applicable(CheckId::C3, "too few slices to form a slice distance");
    }
    let epsilon = thresholds.epsilon.resolve(manifest.modal_spacing);
    let violations = slice_distance_violations(&manifest.slice_distances, manifest.modal_spacing, epsilon);
    let detail = if violations.is_empty() {
        format!(
            "uniform spacing {:.3} mm (tolerance {:.3} mm)",
            manifest.modal_spacing, epsilon
        )
    } else {
        let items = violations.iter().map(|v| {
            let term = match v.term {
                DistanceTerm::BelowTolerance => "below-tolerance",
                DistanceTerm::NonUniform => "non-uniform",
            };
            format!("#{} sd={:.3} {term}", v.index, v.distance)
        });
        format!(
            "modal spacing {:.3} mm, tolerance {:.3} mm; violations: [{}]",
            manifest.modal_spacing,
            epsilon,
            limited_list(items, violations.len())
        )
    };
    QaFinding::evaluated(CheckId::C3, violations.len() as i64, detail)
}

pub fn check_few_slices(manifest: &SeriesManifest, thresholds: &QaThresholds) -> QaFinding {
    few_slices_finding(manifest.slice_count, thresholds)
}

fn few_slices_finding(count: usize, thresholds: &QaThresholds) -> QaFinding {
    let value = i64::from(count < thresholds.delta);
    QaFinding::evaluated(
        CheckId::C4,
        value,
        format!("{count} slices (minimum {})", thresholds.delta),
    )
}

pub fn check_physical_length(manifest: &SeriesManifest, thresholds: &QaThresholds) -> QaFinding {
    let pl = manifest.physical_length;
    let value = i64::from(thresholds.sigma1 < pl && pl < thresholds.sigma2);
    QaFinding::evaluated(
        CheckId::C5,
        value,
        format!(
            "physical length {pl:.2} mm (bounds {} - {} mm)",
            thresholds.sigma1, thresholds.sigma2
        ),
    )
}

/// Findings for C1..C5, in that order.
pub fn run_dicom_qa(manifest: &SeriesManifest, thresholds: &QaThresholds) -> Vec<QaFinding> {
    let (c1, c2) = check_instance_numbers(manifest);
    vec![
        c1,
        c2,
        check_slice_distance(manifest, thresholds),
        check_few_slices(manifest, thresholds),
        check_physical_length(manifest, thresholds),
    ]
}

/// Builds the manifest and runs C1..C5. A manifest error does not abort:
/// checks that need only instance numbers still run, the others are marked
/// not applicable.
pub fn assess_headers(
    headers: Vec<SliceHeader>,
    thresholds: &QaThresholds,
) -> (Result<SeriesManifest, SeriesError>, Vec<QaFinding>) {
    let instance_numbers: Vec<i64> = headers.iter().map(|h| h.instance_number).collect();
    let count = headers.len();
    match build_manifest(headers) {
        Ok(manifest) => {
            let findings = run_dicom_qa(&manifest, thresholds);
            (Ok(manifest), findings)
        }
        Err(err) => {
            let reason = err.to_string();
            let findings = if err == SeriesError::EmptySeries {
                [CheckId::C1, CheckId::C2, CheckId::C3, CheckId::C4, CheckId::C5]
                    .into_iter()
                    .map(|c| QaFinding::not_applicable(c, reason.clone()))
                    .collect()
            } else {
                let (c1, c2) = instance_number_findings(&instance_numbers);
                vec![
                    c1,
                    c2,
                    QaFinding::not_applicable(CheckId::C3, reason.clone()),
                    few_slices_finding(count, thresholds),
                    QaFinding::not_applicable(CheckId::C5, reason),
                ]
            };
            (Err(err), findings)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::findings::{Epsilon, Outcome};
    use proptest::prelude::*;

    pub(crate) fn header(instance_number: i64, location: f64) -> SliceHeader {
        SliceHeader {
            source_path: String::new(),
            series_uid: "1.2.3".into(),
            study_uid: None,
            instance_number,
            slice_location: Some(location),
            image_position: Some([0.0, 0.0, location]),
            image_orientation: Some([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            pixel_spacing: [0.7, 0.7],
            slice_thickness: Some(2.5),
            rows: 4,
            columns: 4,
            bits_allocated: 16,
            pixel_representation: 0,
            rescale_slope: 1.0,
            rescale_intercept: -1024.0,
        }
    }

    fn uniform(n: usize, step: f64) -> Vec<SliceHeader> {
        (0..n).map(|i| header(i as i64 + 1, i as f64 * step)).collect()
    }

    fn thresholds(eps: f64) -> QaThresholds {
        QaThresholds {
            epsilon: Epsilon::AbsoluteMm(eps),
            ..QaThresholds::default()
        }
    }

    fn manifest_from_distances(distances: &[f64]) -> SeriesManifest {
        let mut loc = 0.0;
        let mut headers = vec![header(1, 0.0)];
        for (i, d) in distances.iter().enumerate() {
            loc += d;
            headers.push(header(i as i64 + 2, loc));
        }
        build_manifest(headers).unwrap()
    }

    // Oracle: enumerate every integer of [min, max] and count absentees.
    fn brute_missing(ins: &[i64]) -> i64 {
        let (min, max) = (*ins.iter().min().unwrap(), *ins.iter().max().unwrap());
        (min..=max).filter(|v| !ins.contains(v)).count() as i64
    }

    // Oracle: O(n^2) scan over index pairs.
    fn brute_pairs(ins: &[i64]) -> i64 {
        let mut n = 0;
        for i in 0..ins.len() {
            for j in i + 1..ins.len() {
                if ins[i] == ins[j] {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn three_slices_manifest() {
        let m = build_manifest(uniform(3, 2.5)).unwrap();
        assert_eq!(m.slice_distances, vec![2.5, 2.5]);
        assert_eq!(m.modal_spacing, 2.5);
        assert_eq!(m.physical_length, 5.0);
    }

    #[test]
    fn single_slice_manifest() {
        let m = build_manifest(uniform(1, 2.5)).unwrap();
        assert!(m.slice_distances.is_empty());
        assert_eq!(m.physical_length, 0.0);
    }

    #[test]
    fn manifest_is_independent_of_input_order() {
        let sorted = build_manifest(uniform(6, 1.25)).unwrap();
        let mut shuffled = uniform(6, 1.25);
        shuffled.swap(0, 4);
        shuffled.swap(1, 5);
        shuffled.reverse();
        assert_eq!(
            build_manifest(shuffled).unwrap().slice_distances,
            sorted.slice_distances
        );
    }

    #[test]
    fn manifest_errors() {
        assert_eq!(build_manifest(vec![]), Err(SeriesError::EmptySeries));
        let mut mixed = uniform(2, 1.0);
        mixed[1].series_uid = "9.9".into();
        assert!(matches!(build_manifest(mixed), Err(SeriesError::MixedSeries(..))));
        let mut no_geom = uniform(2, 1.0);
        no_geom[0].slice_location = None;
        no_geom[0].image_position = None;
        assert_eq!(build_manifest(no_geom), Err(SeriesError::NoGeometry));
    }

    #[test]
    fn positions_fall_back_to_image_position_along_normal() {
        let mut headers = uniform(4, 3.0);
        for h in &mut headers {
            h.slice_location = None;
            // Sagittal plane: normal is -x.
            let z = h.image_position.unwrap()[2];
            h.image_position = Some([z, 10.0, -4.0]);
            h.image_orientation = Some([0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
        }
        let m = build_manifest(headers).unwrap();
        assert_eq!(m.slice_distances, vec![-3.0, -3.0, -3.0]);
        assert_eq!(m.physical_length, 9.0);
        assert!(check_slice_distance(&m, &thresholds(0.1)).passed());
    }

    #[test]
    fn complete_instance_numbers_pass() {
        let ins: Vec<i64> = (1..=100).collect();
        let (c1, c2) = instance_number_findings(&ins);
        assert_eq!((c1.value, c2.value), (Some(0), Some(0)));
        assert!(c1.passed() && c2.passed());
    }

    #[test]
    fn one_missing_instance_number() {
        let ins: Vec<i64> = (1..=100).filter(|v| *v != 50).collect();
        let (c1, _) = instance_number_findings(&ins);
        assert_eq!(c1.value, Some(brute_missing(&ins)));
        assert_eq!(c1.value, Some(1));
        assert!(c1.detail.contains("50"));
        assert!(c1.failed());
    }

    #[test]
    fn duplicated_instance_numbers() {
        let ins = [1, 2, 2, 2, 3];
        let (c1, c2) = instance_number_findings(&ins);
        assert_eq!(c1.value, Some(-2));
        assert_eq!(c2.value, Some(brute_pairs(&ins)));
        assert_eq!(c2.value, Some(3));
        assert!(c1.failed() && c2.failed());
    }

    #[test]
    fn uniform_distances_pass() {
        let m = manifest_from_distances(&[2.5; 10]);
        let f = check_slice_distance(&m, &thresholds(0.1));
        assert_eq!(f.value, Some(0));
        assert!(f.passed());
    }

    #[test]
    fn duplicated_slice_is_a_distance_violation() {
        let m = manifest_from_distances(&[2.5, 2.5, 0.0, 2.5]);
        let v = slice_distance_violations(&m.slice_distances, m.modal_spacing, 0.1);
        assert!(v.iter().all(|v| v.index == 2));
        assert_eq!(v.len(), 2);
        let f = check_slice_distance(&m, &thresholds(0.1));
        assert!(f.failed());
        assert!(f.detail.contains("#2"));
    }

    #[test]
    fn jump_back_fires_both_terms() {
        let m = manifest_from_distances(&[2.5, 2.5, -7.5, 2.5]);
        let v = slice_distance_violations(&m.slice_distances, m.modal_spacing, 0.1);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].term, DistanceTerm::BelowTolerance);
        assert_eq!(v[1].term, DistanceTerm::NonUniform);
        assert!(check_slice_distance(&m, &thresholds(0.1)).failed());
    }

    #[test]
    fn decreasing_positions_are_not_violations() {
        let m = manifest_from_distances(&[-2.5; 8]);
        assert!(check_slice_distance(&m, &thresholds(0.1)).passed());
    }

    #[test]
    fn single_slice_distance_not_applicable() {
        let m = build_manifest(uniform(1, 1.0)).unwrap();
        assert_eq!(
            check_slice_distance(&m, &thresholds(0.1)).outcome,
            Outcome::NotApplicable
        );
    }

    #[test]
    fn few_slices_boundaries() {
        let t = QaThresholds::default();
        assert!(check_few_slices(&build_manifest(uniform(100, 2.5)).unwrap(), &t).passed());
        assert!(check_few_slices(&build_manifest(uniform(3, 2.5)).unwrap(), &t).failed());
        assert!(check_few_slices(&build_manifest(uniform(50, 2.5)).unwrap(), &t).passed());
    }

    #[test]
    fn physical_length_bounds() {
        let t = QaThresholds::default();
        let m = build_manifest(uniform(100, 2.5)).unwrap();
        assert_eq!(m.physical_length, 247.5);
        assert!(check_physical_length(&m, &t).passed());
        let whole_body = build_manifest(uniform(601, 2.5)).unwrap();
        assert_eq!(whole_body.physical_length, 1500.0);
        assert!(check_physical_length(&whole_body, &t).failed());
        let single = build_manifest(uniform(1, 2.5)).unwrap();
        assert!(check_physical_length(&single, &t).failed());
    }

    #[test]
    fn dropped_slice_fails_c1_and_c3() {
        let mut headers = uniform(100, 2.5);
        headers.remove(40);
        let m = build_manifest(headers).unwrap();
        let f = run_dicom_qa(&m, &QaThresholds::default());
        let ids: Vec<CheckId> = f.iter().map(|f| f.check).collect();
        assert_eq!(
            ids,
            vec![CheckId::C1, CheckId::C2, CheckId::C3, CheckId::C4, CheckId::C5]
        );
        assert!(f[0].failed() && f[2].failed());
        assert!(f[1].passed() && f[3].passed() && f[4].passed());
        assert_eq!(f[2].value, Some(1));
    }

    #[test]
    fn three_slice_series_fails_c4_with_two_distances() {
        let m = build_manifest(uniform(3, 2.5)).unwrap();
        let f = run_dicom_qa(&m, &QaThresholds::default());
        assert!(f[3].failed());
        assert_eq!(f[2].value, Some(0));
        assert_eq!(m.slice_distances.len(), 2);
    }

    #[test]
    fn geometry_error_keeps_instance_checks() {
        let mut headers = uniform(5, 1.0);
        headers[2].slice_location = None;
        headers[2].image_position = None;
        let (manifest, findings) = assess_headers(headers, &QaThresholds::default());
        assert_eq!(manifest.unwrap_err(), SeriesError::NoGeometry);
        assert_eq!(findings[0].outcome, Outcome::Pass);
        assert_eq!(findings[2].outcome, Outcome::NotApplicable);
        assert_eq!(findings[3].outcome, Outcome::Fail);
        assert_eq!(findings[4].outcome, Outcome::NotApplicable);
    }

    proptest! {
        #[test]
        fn c1_matches_interval_enumeration(mut ins in proptest::collection::btree_set(-50i64..200, 1..80)) {
            let v: Vec<i64> = std::mem::take(&mut ins).into_iter().collect();
            prop_assert_eq!(missing_instance_count(&v), brute_missing(&v));
        }

        #[test]
        fn c2_matches_pair_scan(v in proptest::collection::vec(0i64..30, 1..120)) {
            prop_assert_eq!(duplicate_pair_count(&v), brute_pairs(&v));
        }

        #[test]
        fn adding_duplicate_never_decreases_c2(v in proptest::collection::vec(0i64..30, 1..60), pick in any::<proptest::sample::Index>()) {
            let before = duplicate_pair_count(&v);
            let mut w = v.clone();
            w.push(v[pick.index(v.len())]);
            prop_assert!(duplicate_pair_count(&w) >= before);
        }

        #[test]
        fn removing_interior_slice_adds_one_to_c1(n in 3i64..200, pick in any::<proptest::sample::Index>()) {
            let full: Vec<i64> = (1..=n).collect();
            // Interior values are 2..=n-1.
            let k = 2 + pick.index((n - 2) as usize) as i64;
            let removed: Vec<i64> = full.iter().copied().filter(|v| *v != k).collect();
            prop_assert_eq!(missing_instance_count(&removed), missing_instance_count(&full) + 1);
        }

        #[test]
        fn uniform_series_length(n in 1usize..300, step_milli in 100u32..8000) {
            let step = f64::from(step_milli) / 1000.0;
            let m = build_manifest(uniform(n, step)).unwrap();
            prop_assert!((m.physical_length - (n as f64 - 1.0) * m.modal_spacing).abs() <= 1e-6);
        }

        #[test]
        fn findings_do_not_depend_on_header_order(n in 2usize..40, seed in any::<u64>(), dup in any::<bool>()) {
            let mut headers = uniform(n, 2.5);
            if dup {
                headers.push(header(1, 0.0));
            }
            let baseline = run_dicom_qa(&build_manifest(headers.clone()).unwrap(), &QaThresholds::default());
            let mut shuffled = headers;
            let len = shuffled.len();
            let mut s = seed;
            for i in (1..len).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted = run_dicom_qa(&build_manifest(shuffled).unwrap(), &QaThresholds::default());
            prop_assert_eq!(baseline, permuted);
        }
    }
}
