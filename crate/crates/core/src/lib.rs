//! Quality assessment for clinical CT series.
//!
//! The pipeline parses DICOM headers, runs the series-level checks (missing
//! or duplicated instance numbers, slice spacing, slice count, physical
//! length), assembles a volume, checks orientation and resolution on its
//! affine, reorients to the standard axis order, crops to the lung ROI,
//! renders review montages, and aggregates everything into a report that
//! also carries human review verdicts.

pub mod config;
pub mod dicom;
pub mod findings;
pub mod gallery;
pub mod geometry;
pub mod pipeline;
pub mod report;
pub mod series;
pub mod service;
pub mod synth;
pub mod verdicts;
pub mod volume;

pub use findings::{CheckId, Epsilon, Outcome, QaFinding, QaThresholds};
