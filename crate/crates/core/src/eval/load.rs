//! Dataset loaders for the three labeling shapes.
//!
//! - line labeled: every line starts with a label token, `-` for normal
//!   and anything else (an alert category) for anomalous;
//! - group labeled: a directory with `logs.txt` and a `labels.csv` sidecar
//!   mapping a block id such as `blk_-42` to `Normal` or `Anomaly`;
//! - synthetic: a generator manifest, replayed with its ground truth.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::synth::{generate_synthetic, Manifest};
use super::{EvalError, Label, LabeledRecord};
use crate::parser::RawLog;

pub const LOGS_FILE: &str = "logs.txt";
pub const LABELS_FILE: &str = "labels.csv";

static BLOCK_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"blk_-?\d+").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    LineLabeled,
    GroupLabeled,
    Synthetic,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "line_labeled" => Ok(Self::LineLabeled),
            "group_labeled" => Ok(Self::GroupLabeled),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(format!("unknown dataset format {s:?}")),
        }
    }
}

pub fn group_key(body: &str) -> Option<String> {
    BLOCK_ID.find(body).map(|m| m.as_str().to_string())
}

pub fn load_dataset(path: &Path, format: DatasetFormat, seed: u64) -> Result<Vec<LabeledRecord>, EvalError> {
    match format {
        DatasetFormat::LineLabeled => load_line_labeled(&std::fs::read_to_string(path)?),
        DatasetFormat::GroupLabeled => load_group_labeled(path),
        DatasetFormat::Synthetic => load_synthetic(&std::fs::read_to_string(path)?, seed),
    }
}

fn format_err(line: u64, message: impl Into<String>) -> EvalError {
    EvalError::Format { line, message: message.into() }
}

/// Blank lines are skipped but still counted for line numbers.
pub fn load_line_labeled(text: &str) -> Result<Vec<LabeledRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format_err(line_no, "expected a label token followed by the log line"))?;
        let label = if label == "-" { Label::Normal } else { Label::Anomalous };
        let raw = RawLog::from_line(line_no, rest.trim_start()).map_err(|e| format_err(line_no, e.to_string()))?;
        out.push(LabeledRecord { group_key: group_key(&raw.body), raw, label, subkind: None });
    }
    Ok(out)
}

/// `dir/logs.txt` plus `dir/labels.csv` with a header row.
pub fn load_group_labeled(dir: &Path) -> Result<Vec<LabeledRecord>, EvalError> {
    let labels_path = dir.join(LABELS_FILE);
    let csv = std::fs::read_to_string(&labels_path)
        .map_err(|e| format_err(0, format!("{}: {e}", labels_path.display())))?;
    let mut labels = HashMap::new();
    for (i, row) in csv.lines().enumerate().skip(1) {
        if row.trim().is_empty() {
            continue;
        }
        let (key, label) = row
            .split_once(',')
            .ok_or_else(|| format_err(i as u64 + 1, format!("{LABELS_FILE}: expected key,label")))?;
        let label = match label.trim() {
            "Normal" => Label::Normal,
            "Anomaly" | "Anomalous" => Label::Anomalous,
            other => return Err(format_err(i as u64 + 1, format!("{LABELS_FILE}: unknown label {other:?}"))),
        };
        labels.insert(key.trim().to_string(), label);
    }
    let text = std::fs::read_to_string(dir.join(LOGS_FILE))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw = RawLog::from_line(line_no, line).map_err(|e| format_err(line_no, e.to_string()))?;
        let key = group_key(&raw.body);
        let label = match &key {
            None => Label::Normal,
            Some(k) => *labels
                .get(k)
                .ok_or_else(|| format_err(line_no, format!("{k} has no entry in {LABELS_FILE}")))?,
        };
        out.push(LabeledRecord { raw, label, group_key: key, subkind: None });
    }
    Ok(out)
}

pub fn load_synthetic(manifest_json: &str, seed: u64) -> Result<Vec<LabeledRecord>, EvalError> {
    let manifest = Manifest::from_json(manifest_json)?;
    Ok(generate_synthetic(&manifest, seed)?.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_marks_normal() {
        let recs = load_line_labeled("- 2005-06-03T15:42:50 ok line\nKERNDTLB 2005-06-03T15:42:51 bad line\n\n- x").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, Label::Normal);
        assert_eq!(recs[0].raw.body, "ok line");
        assert_eq!(recs[1].label, Label::Anomalous);
        assert_eq!(recs[2].raw.line_no, 4);
        assert!(matches!(load_line_labeled("lonely"), Err(EvalError::Format { line: 1, .. })));
    }

    #[test]
    fn groups_join_labels() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(LOGS_FILE),
            "Receiving blk_1 from a\nServed blk_-7 to b\nDeleting blk_1\nheartbeat\n",
        )
        .unwrap();
        assert!(matches!(load_group_labeled(dir.path()), Err(EvalError::Format { .. })));
        std::fs::write(dir.path().join(LABELS_FILE), "BlockId,Label\nblk_1,Anomaly\nblk_-7,Normal\n").unwrap();
        let recs = load_group_labeled(dir.path()).unwrap();
        let labels: Vec<Label> = recs.iter().map(|r| r.label).collect();
        assert_eq!(labels, [Label::Anomalous, Label::Normal, Label::Anomalous, Label::Normal]);
        assert_eq!(recs[1].group_key.as_deref(), Some("blk_-7"));
        assert_eq!(recs[3].group_key, None);
    }
}
