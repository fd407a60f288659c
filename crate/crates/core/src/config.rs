//! Pipeline configuration: defaults, a TOML key-value file, and overrides
//! (command-line flags) applied on top.
//!
//! File keys (all optional):
//!
//! ```toml
//! input_root = "corpus"
//! output_root = "qa_out"
//! corpus_id = "nlst-batch-3"
//! epsilon_mm = 0.25          # absolute slice-distance tolerance, or
//! epsilon_rel = 0.1          # tolerance as a fraction of the modal spacing
//! delta = 50
//! sigma1 = 200.0
//! sigma2 = 500.0
//! phi = [1.0, 1.0, 5.0]
//! phi_min = [0.3, 0.3, 0.5]  # optional lower bounds
//! disabled_checks = ["C7"]
//! crop = true
//! gallery = true
//! crop_margin = 0.10
//! tile_size = 128
//! selection = "largest-slice-count"  # or "all"
//! force_assembly = false
//! review_sample_size = 100
//! review_seed = 0
//! workers = 0                # 0 = one per logical core
//! resume = true
//! fixed_clock = "2024-01-01T00:00:00Z"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::findings::{CheckId, Epsilon, QaThresholds};
use crate::gallery::DEFAULT_TILE_SIZE;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigInvalid(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    /// One scan per session: the series with the most slices.
    #[default]
    LargestSliceCount,
    /// Every series in a session is a scan.
    All,
}

/// Which stages run. Disabled checks are reported as not applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageToggles {
    pub disabled_checks: BTreeSet<CheckId>,
    pub crop: bool,
    pub gallery: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            disabled_checks: BTreeSet::new(),
            crop: true,
            gallery: true,
        }
    }
}

impl StageToggles {
    pub fn enabled(&self, check: CheckId) -> bool {
        !self.disabled_checks.contains(&check)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub input_root: PathBuf,
    #[serde(skip)]
    pub output_root: PathBuf,
    pub corpus_id: Option<String>,
    pub thresholds: QaThresholds,
    pub toggles: StageToggles,
    pub selection: SelectionPolicy,
    /// Assemble volumes even when C1..C4 fail.
    pub force_assembly: bool,
    pub crop_margin: f64,
    pub tile_size: usize,
    pub review_sample_size: usize,
    pub review_seed: u64,
    /// 0 means one worker per logical core.
    pub workers: usize,
    /// Skip scans whose inputs and settings match a previous run.
    pub resume: bool,
    /// Timestamp used instead of the wall clock, for reproducible reports.
    pub fixed_clock: Option<DateTime<Utc>>,
}

impl PipelineConfig {
    pub fn new(input_root: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            input_root: input_root.into(),
            output_root: output_root.into(),
            corpus_id: None,
            thresholds: QaThresholds::default(),
            toggles: StageToggles::default(),
            selection: SelectionPolicy::default(),
            force_assembly: false,
            crop_margin: 0.10,
            tile_size: DEFAULT_TILE_SIZE,
            review_sample_size: 0,
            review_seed: 0,
            workers: 0,
            resume: true,
            fixed_clock: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let bad = |m: String| Err(ConfigInvalid(m));
        self.thresholds.validate().map_err(|e| ConfigInvalid(e.to_string()))?;
        if self.input_root.as_os_str().is_empty() || self.output_root.as_os_str().is_empty() {
            return bad("input_root and output_root are required".into());
        }
        if self.input_root == self.output_root {
            return bad("input_root and output_root must differ".into());
        }
        if !(0.0..=0.5).contains(&self.crop_margin) {
            return bad(format!("crop_margin {} outside [0, 0.5]", self.crop_margin));
        }
        if !(8..=1024).contains(&self.tile_size) {
            return bad(format!("tile_size {} outside [8, 1024]", self.tile_size));
        }
        if self.toggles.disabled_checks.contains(&CheckId::Subj) {
            return bad("SUBJ is not a pipeline stage".into());
        }
        Ok(())
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.fixed_clock.unwrap_or_else(Utc::now)
    }

    /// Settings that change per-scan results; part of the resume digest.
    pub fn scan_fingerprint(&self) -> String {
        serde_json::json!({
            "thresholds": self.thresholds,
            "toggles": self.toggles,
            "selection": self.selection,
            "force_assembly": self.force_assembly,
            "crop_margin": self.crop_margin,
            "tile_size": self.tile_size,
        })
        .to_string()
    }
}

/// Partial configuration: the file schema, also used for flag overrides.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub input_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub corpus_id: Option<String>,
    pub epsilon_mm: Option<f64>,
    pub epsilon_rel: Option<f64>,
    pub delta: Option<usize>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub phi: Option<[f64; 3]>,
    pub phi_min: Option<[f64; 3]>,
    pub disabled_checks: Option<Vec<String>>,
    pub crop: Option<bool>,
    pub gallery: Option<bool>,
    pub crop_margin: Option<f64>,
    pub tile_size: Option<usize>,
    pub selection: Option<SelectionPolicy>,
    pub force_assembly: Option<bool>,
    pub review_sample_size: Option<usize>,
    pub review_seed: Option<u64>,
    pub workers: Option<usize>,
    pub resume: Option<bool>,
    pub fixed_clock: Option<DateTime<Utc>>,
}

impl ConfigOverlay {
    pub fn from_toml(text: &str) -> Result<Self, ConfigInvalid> {
        toml::from_str(text).map_err(|e| ConfigInvalid(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigInvalid> {
        let text = fs::read_to_string(path).map_err(|e| ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(self, config: &mut PipelineConfig) -> Result<(), ConfigInvalid> {
        if self.epsilon_mm.is_some() && self.epsilon_rel.is_some() {
            return Err(ConfigInvalid("set only one of epsilon_mm and epsilon_rel".into()));
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        let t = &mut config.thresholds;
        set! {
            input_root => config.input_root,
            output_root => config.output_root,
            delta => t.delta,
            sigma1 => t.sigma1,
            sigma2 => t.sigma2,
            phi => t.phi,
            crop => config.toggles.crop,
            gallery => config.toggles.gallery,
            crop_margin => config.crop_margin,
            tile_size => config.tile_size,
            selection => config.selection,
            force_assembly => config.force_assembly,
            review_sample_size => config.review_sample_size,
            review_seed => config.review_seed,
            workers => config.workers,
            resume => config.resume,
        }
        if let Some(v) = self.epsilon_mm {
            t.epsilon = Epsilon::AbsoluteMm(v);
        }
        if let Some(v) = self.epsilon_rel {
            t.epsilon = Epsilon::RelativeToSpacing(v);
        }
        if self.phi_min.is_some() {
            t.phi_min = self.phi_min;
        }
        if self.corpus_id.is_some() {
            config.corpus_id = self.corpus_id;
        }
        if self.fixed_clock.is_some() {
            config.fixed_clock = self.fixed_clock;
        }
        if let Some(list) = self.disabled_checks {
            config.toggles.disabled_checks = list
                .iter()
                .map(|s| s.parse::<CheckId>().map_err(ConfigInvalid))
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    }
}

/// Defaults, then the optional file, then flag overrides; validated.
pub fn resolve_config(file: Option<&Path>, flags: ConfigOverlay) -> Result<PipelineConfig, ConfigInvalid> {
    let mut config = PipelineConfig::new(PathBuf::new(), PathBuf::new());
    if let Some(path) = file {
        ConfigOverlay::from_file(path)?.apply(&mut config)?;
    }
    flags.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}
