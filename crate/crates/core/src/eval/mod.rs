//! Labeled datasets, precision/recall/F1 scoring, the synthetic corpus
//! generator and the chronological split experiment.

mod load;
mod split;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::AnomalyReport;
use crate::parser::RawLog;
use crate::pipeline::PipelineError;

pub use load::{group_key, load_dataset, load_group_labeled, load_line_labeled, load_synthetic, DatasetFormat, LABELS_FILE, LOGS_FILE};
pub use split::{results_table, run_split_experiment, SplitResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub raw: RawLog,
    pub label: Label,
    /// Session or block id for grouped labels.
    pub group_key: Option<String>,
    /// Injected anomaly kind, known only for generated corpora.
    pub subkind: Option<String>,
}

impl LabeledRecord {
    /// The log line as it would appear in a file.
    pub fn line(&self) -> String {
        match &self.raw.timestamp_text {
            Some(ts) => format!("{ts} {}", self.raw.body),
            None => self.raw.body.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Line,
    Group,
}

/// Which ratios had a zero denominator and were reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub undefined: UndefinedFlags,
}

impl Scorecard {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (precision, p_undef) = ratio(tp, tp + fp);
        let (recall, r_undef) = ratio(tp, tp + fn_);
        let (f1, f_undef) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Self {
            tp,
            tn,
            fp,
            fn_,
            precision,
            recall,
            f1,
            undefined: UndefinedFlags { precision: p_undef, recall: r_undef, f1: f_undef },
        }
    }
}

/// Count predicted-anomalous units against the truth. A unit is a line or
/// a group; it is predicted anomalous when at least one report targets it.
/// Records without a group key are ignored at group granularity.
pub fn score(reports: &[AnomalyReport], truth: &[LabeledRecord], granularity: Granularity) -> Result<Scorecard, EvalError> {
    let mut unit_of_line: BTreeMap<u64, Option<String>> = BTreeMap::new();
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for r in truth {
        let unit = match granularity {
            Granularity::Line => Some(r.raw.line_no.to_string()),
            Granularity::Group => r.group_key.clone(),
        };
        if let Some(u) = &unit {
            let l = labels.entry(u.clone()).or_insert(r.label);
            if r.label == Label::Anomalous {
                *l = Label::Anomalous;
            }
        }
        unit_of_line.insert(r.raw.line_no, unit);
    }
    let mut flagged: BTreeSet<String> = BTreeSet::new();
    for rep in reports {
        match unit_of_line.get(&rep.line_no) {
            None => return Err(EvalError::Alignment(format!("report for unknown line {}", rep.line_no))),
            Some(Some(u)) => {
                flagged.insert(u.clone());
            }
            Some(None) => {}
        }
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (unit, label) in &labels {
        match (flagged.contains(unit), label) {
            (true, Label::Anomalous) => tp += 1,
            (true, Label::Normal) => fp += 1,
            (false, Label::Anomalous) => fn_ += 1,
            (false, Label::Normal) => tn += 1,
        }
    }
    Ok(Scorecard::from_counts(tp, fp, fn_, tn))
}

/// Share of lines whose predicted group holds exactly the lines of their
/// true group.
pub fn grouping_accuracy<P: Ord, T: Ord>(predicted: &[P], truth: &[T]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "one prediction per line");
    if predicted.is_empty() {
        return 1.0;
    }
    let mut by_pred: BTreeMap<&P, BTreeSet<&T>> = BTreeMap::new();
    let mut pred_size: BTreeMap<&P, usize> = BTreeMap::new();
    let mut truth_size: BTreeMap<&T, usize> = BTreeMap::new();
    for (p, t) in predicted.iter().zip(truth) {
        by_pred.entry(p).or_default().insert(t);
        *pred_size.entry(p).or_default() += 1;
        *truth_size.entry(t).or_default() += 1;
    }
    let correct = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| by_pred[p].len() == 1 && pred_size[p] == truth_size[t])
        .count();
    correct as f64 / predicted.len() as f64
}
