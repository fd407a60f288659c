//! Human review verdicts and their append-only JSON-lines log.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERDICTS_FILE: &str = "verdicts.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Pass,
    Fail,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub scan_id: String,
    pub verdict: VerdictKind,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

/// Verdict as submitted by a client; the server stamps a missing timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSubmission {
    pub scan_id: String,
    pub verdict: VerdictKind,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

impl VerdictSubmission {
    pub fn into_verdict(self, now: DateTime<Utc>) -> ReviewVerdict {
        ReviewVerdict {
            scan_id: self.scan_id,
            verdict: self.verdict,
            note: self.note,
            reviewer: self.reviewer,
            timestamp: self.timestamp.unwrap_or(now),
        }
    }
}

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Appends one verdict as a single line. Existing lines are never touched.
pub fn append_verdict(path: &Path, verdict: &ReviewVerdict) -> Result<(), VerdictError> {
    let mut line = serde_json::to_string(verdict).map_err(|source| VerdictError::Malformed { line: 0, source })?;
    line.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

/// Reads the whole log in file order. A missing file is an empty log; blank
/// lines are skipped.
pub fn read_verdicts(path: &Path) -> Result<Vec<ReviewVerdict>, VerdictError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| VerdictError::Malformed { line: i + 1, source }))
        .collect()
}

/// Latest verdict per scan by timestamp; equal timestamps resolve to the
/// later log entry.
pub fn latest_verdicts(verdicts: &[ReviewVerdict]) -> BTreeMap<String, ReviewVerdict> {
    let mut latest: BTreeMap<String, ReviewVerdict> = BTreeMap::new();
    for v in verdicts {
        match latest.get(&v.scan_id) {
            Some(current) if current.timestamp > v.timestamp => {}
            _ => {
                latest.insert(v.scan_id.clone(), v.clone());
            }
        }
    }
    latest
}
