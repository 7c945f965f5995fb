//! Chronological train/test splits scored end to end.

use serde::{Deserialize, Serialize};

use super::{score, EvalError, Granularity, LabeledRecord, Scorecard};
use crate::detector::{stream_detect_raw, Resolution};
use crate::pipeline::{train_offline_records, PipelineConfig};

pub const MIN_RECORDS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// One row of the experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub dataset: String,
    pub fraction: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub config_hash: String,
    pub scorecard: Scorecard,
    pub train_records: usize,
    pub test_records: usize,
    /// Test lines no trained template covered, and how they were resolved.
    pub unmatched: usize,
    pub adopted: usize,
    pub novel: usize,
    /// Lines whose detection failed; the stream continued past them.
    pub line_errors: usize,
}

/// For each fraction: train on the chronological prefix, detect on the
/// rest, score at the given granularity.
pub fn run_split_experiment(
    dataset: &str,
    records: &[LabeledRecord],
    fractions: &[f64],
    config: &PipelineConfig,
    granularity: Granularity,
) -> Result<Vec<SplitResult>, EvalError> {
    if records.len() < MIN_RECORDS {
        return Err(EvalError::Protocol(format!("need at least {MIN_RECORDS} records, got {}", records.len())));
    }
    if records.windows(2).any(|w| w[0].raw.line_no >= w[1].raw.line_no) {
        return Err(EvalError::Protocol("records are not in line order".into()));
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let cut = (fraction * records.len() as f64).floor() as usize;
        if !(fraction > 0.0 && fraction < 1.0) || cut == 0 || cut >= records.len() {
            return Err(EvalError::Protocol(format!("fraction {fraction} leaves an empty train or test set")));
        }
        let (train, test) = records.split_at(cut);
        let train_raw: Vec<_> = train.iter().map(|r| r.raw.clone()).collect();
        let (state, _) = train_offline_records(&train_raw, config)?;
        let output = stream_detect_raw(test.iter().map(|r| &r.raw), &state);
        let sc = score(&output.reports, test, granularity)?;
        let mut unmatched = 0;
        let mut adopted = 0;
        let mut novel = 0;
        for o in &output.outcomes {
            match o.resolution {
                Resolution::Trained => {}
                Resolution::Adopted { .. } => {
                    unmatched += 1;
                    adopted += 1;
                }
                Resolution::Novel { .. } => {
                    unmatched += 1;
                    novel += 1;
                }
            }
        }
        out.push(SplitResult {
            dataset: dataset.to_string(),
            fraction,
            precision: sc.precision,
            recall: sc.recall,
            f1: sc.f1,
            counts: Counts { tp: sc.tp, fp: sc.fp, fn_: sc.fn_, tn: sc.tn },
            config_hash: state.config_hash.clone(),
            scorecard: sc,
            train_records: train.len(),
            test_records: test.len(),
            unmatched,
            adopted,
            novel,
            line_errors: output.errors.len(),
        });
    }
    Ok(out)
}

/// Aligned plain-text table of the results.
pub fn results_table(rows: &[SplitResult]) -> String {
    let mut s = format!(
        "{:<14} {:>8} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6} {:>7} {:>9}\n",
        "dataset", "fraction", "precision", "recall", "f1", "tp", "fp", "fn", "tn", "unmatched"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>8.2} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6} {:>7} {:>9}\n",
            r.dataset,
            r.fraction,
            r.precision,
            r.recall,
            r.f1,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_,
            r.counts.tn,
            r.unmatched
        ));
    }
    s
}
