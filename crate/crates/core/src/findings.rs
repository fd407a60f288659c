//! Check identifiers, per-check outcomes and the thresholds they use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    #[serde(rename = "SUBJ")]
    Subj,
}

impl CheckId {
    /// Report row order.
    pub const ALL: [CheckId; 8] = [
        CheckId::C1,
        CheckId::C2,
        CheckId::C3,
        CheckId::C4,
        CheckId::C5,
        CheckId::C6,
        CheckId::C7,
        CheckId::Subj,
    ];

    pub const OBJECTIVE: [CheckId; 7] = [
        CheckId::C1,
        CheckId::C2,
        CheckId::C3,
        CheckId::C4,
        CheckId::C5,
        CheckId::C6,
        CheckId::C7,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CheckId::C1 => "C1",
            CheckId::C2 => "C2",
            CheckId::C3 => "C3",
            CheckId::C4 => "C4",
            CheckId::C5 => "C5",
            CheckId::C6 => "C6",
            CheckId::C7 => "C7",
            CheckId::Subj => "SUBJ",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckId::C1 => "Instance Number Check (missing)",
            CheckId::C2 => "Instance Number Check (duplicated)",
            CheckId::C3 => "Slice Distance Check",
            CheckId::C4 => "Filtering Few-slice Scan",
            CheckId::C5 => "Physical Length Filtering",
            CheckId::C6 => "Orientation Check",
            CheckId::C7 => "Resolution Filtering",
            CheckId::Subj => "Batch Review Double Check",
        }
    }

    pub fn section(self) -> &'static str {
        match self {
            CheckId::C1 | CheckId::C2 | CheckId::C3 | CheckId::C4 | CheckId::C5 => "Objective QA (DICOM)",
            CheckId::C6 | CheckId::C7 => "Objective QA (NIfTI)",
            CheckId::Subj => "Subjective QA (batch)",
        }
    }

    /// Pass rule on the check's value: C5 and C6 are indicators that must be
    /// 1, every other check is a count that must be 0.
    pub fn passes(self, value: i64) -> bool {
        match self {
            CheckId::C5 | CheckId::C6 => value == 1,
            _ => value == 0,
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CheckId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CheckId::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown check id {s:?}"))
    }
}

/// Warning code: no lung component survived masking, so no ROI was cropped.
pub const WARN_EMPTY_LUNG_MASK: &str = "empty_lung_mask";
/// Warning code: only one lung component was found.
pub const WARN_SINGLE_LUNG: &str = "single_lung_component";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaFinding {
    pub check: CheckId,
    pub value: Option<i64>,
    pub outcome: Outcome,
    /// A failed check whose defect was repaired in place (reorientation).
    #[serde(default)]
    pub auto_fixed: bool,
    pub detail: String,
}

impl QaFinding {
    pub fn evaluated(check: CheckId, value: i64, detail: impl Into<String>) -> Self {
        let outcome = if check.passes(value) {
            Outcome::Pass
        } else {
            Outcome::Fail
        };
        Self {
            check,
            value: Some(value),
            outcome,
            auto_fixed: false,
            detail: detail.into(),
        }
    }

    pub fn not_applicable(check: CheckId, reason: impl Into<String>) -> Self {
        Self {
            check,
            value: None,
            outcome: Outcome::NotApplicable,
            auto_fixed: false,
            detail: reason.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    pub fn failed(&self) -> bool {
        self.outcome == Outcome::Fail
    }
}

/// Slice-distance tolerance: fixed in mm, or a fraction of the series'
/// modal spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    AbsoluteMm(f64),
    RelativeToSpacing(f64),
}

/// Lower bound applied to a relative tolerance so that a degenerate modal
/// spacing of zero still yields a positive tolerance.
pub const MIN_EPSILON_MM: f64 = 1e-3;

impl Epsilon {
    pub fn resolve(self, modal_spacing: f64) -> f64 {
        match self {
            Epsilon::AbsoluteMm(v) => v,
            Epsilon::RelativeToSpacing(f) => (f * modal_spacing).max(MIN_EPSILON_MM),
        }
    }

    fn value(self) -> f64 {
        match self {
            Epsilon::AbsoluteMm(v) | Epsilon::RelativeToSpacing(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaThresholds {
    pub epsilon: Epsilon,
    /// Minimum slice count.
    pub delta: usize,
    /// Physical length bounds (mm), exclusive.
    pub sigma1: f64,
    pub sigma2: f64,
    /// Maximum voxel size per world axis (mm).
    pub phi: [f64; 3],
    /// Optional minimum voxel size per axis; off unless configured.
    #[serde(default)]
    pub phi_min: Option<[f64; 3]>,
}

impl Default for QaThresholds {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::RelativeToSpacing(0.1),
            delta: 50,
            sigma1: 200.0,
            sigma2: 500.0,
            phi: [1.0, 1.0, 5.0],
            phi_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid thresholds: {0}")]
pub struct InvalidThresholds(pub String);

impl QaThresholds {
    pub fn validate(&self) -> Result<(), InvalidThresholds> {
        let fail = |m: &str| Err(InvalidThresholds(m.to_string()));
        if !self.epsilon.value().is_finite() || self.epsilon.value() <= 0.0 {
            return fail("epsilon must be > 0");
        }
        if self.delta < 1 {
            return fail("delta must be >= 1");
        }
        if !(self.sigma1 > 0.0 && self.sigma1 < self.sigma2) || !self.sigma2.is_finite() {
            return fail("need 0 < sigma1 < sigma2");
        }
        if !self.phi.iter().all(|p| *p > 0.0 && p.is_finite()) {
            return fail("phi components must be > 0");
        }
        if let Some(min) = self.phi_min {
            if !min.iter().zip(self.phi).all(|(lo, hi)| *lo >= 0.0 && *lo < hi) {
                return fail("phi_min components must be in [0, phi)");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rules() {
        assert!(CheckId::C1.passes(0));
        assert!(!CheckId::C1.passes(-2));
        assert!(CheckId::C5.passes(1));
        assert!(!CheckId::C5.passes(0));
        assert!(CheckId::C6.passes(1));
        assert!(!CheckId::C7.passes(1));
    }

    #[test]
    fn check_ids_parse_case_insensitively() {
        assert_eq!("subj".parse::<CheckId>().unwrap(), CheckId::Subj);
        assert_eq!("C3".parse::<CheckId>().unwrap(), CheckId::C3);
        assert!("C8".parse::<CheckId>().is_err());
    }

    #[test]
    fn default_thresholds_are_valid() {
        QaThresholds::default().validate().unwrap();
        let bad = QaThresholds {
            sigma1: 600.0,
            ..QaThresholds::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relative_epsilon_has_floor() {
        assert_eq!(Epsilon::RelativeToSpacing(0.1).resolve(2.5), 0.25);
        assert_eq!(Epsilon::RelativeToSpacing(0.1).resolve(0.0), MIN_EPSILON_MM);
        assert_eq!(Epsilon::AbsoluteMm(0.1).resolve(2.5), 0.1);
    }
}
