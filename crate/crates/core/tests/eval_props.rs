mod common;

use proptest::prelude::*;
use serde_json::json;
use tplad::detector::{AnomalyKind, AnomalyReport};
use tplad::eval::synth::{generate_synthetic, SUBKINDS};
use tplad::eval::{run_split_experiment, score, EvalError, Granularity, Label, LabeledRecord, Scorecard};
use tplad::parser::RawLog;

proptest! {
    #[test]
    fn scorecard_identities(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
        let s = Scorecard::from_counts(tp, fp, fn_, tn);
        prop_assert_eq!((s.tp, s.fp, s.fn_, s.tn), (tp, fp, fn_, tn));
        prop_assert_eq!(s.undefined.precision, tp + fp == 0);
        prop_assert_eq!(s.undefined.recall, tp + fn_ == 0);
        prop_assert_eq!(s.undefined.f1, tp == 0);
        for x in [s.precision, s.recall, s.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if tp + fp > 0 {
            prop_assert!((s.precision * (tp + fp) as f64 - tp as f64).abs() < 1e-9);
        } else {
            prop_assert_eq!(s.precision, 0.0);
        }
        if tp + fn_ > 0 {
            prop_assert!((s.recall * (tp + fn_) as f64 - tp as f64).abs() < 1e-9);
        } else {
            prop_assert_eq!(s.recall, 0.0);
        }
        if tp > 0 {
            prop_assert!((s.f1 - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() < 1e-12);
            let h = 2.0 * s.precision * s.recall / (s.precision + s.recall);
            prop_assert!((s.f1 - h).abs() < 1e-12);
        } else {
            prop_assert_eq!(s.f1, 0.0);
        }
    }

    #[test]
    fn scoring_partitions_the_units(
        labels in prop::collection::vec((any::<bool>(), 0u8..6), 1..80),
        flagged in prop::collection::vec(any::<bool>(), 80),
    ) {
        let truth: Vec<LabeledRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, (bad, g))| LabeledRecord {
                raw: RawLog::new(i as u64 + 1, "x"),
                label: if *bad { Label::Anomalous } else { Label::Normal },
                group_key: (*g > 0).then(|| format!("blk_{g}")),
                subkind: None,
            })
            .collect();
        let reports: Vec<AnomalyReport> = truth
            .iter()
            .zip(&flagged)
            .filter(|(_, f)| **f)
            .map(|(r, _)| AnomalyReport {
                line_no: r.raw.line_no,
                kind: AnomalyKind::Sequence,
                subkind: None,
                template_id: 0,
                matched: true,
                evidence: json!({}),
            })
            .collect();
        let s = score(&reports, &truth, Granularity::Line).unwrap();
        prop_assert_eq!(s.tp + s.fp + s.fn_ + s.tn, truth.len() as u64);
        prop_assert_eq!(s.tp + s.fn_, truth.iter().filter(|r| r.label == Label::Anomalous).count() as u64);
        prop_assert_eq!(s.tp + s.fp, reports.len() as u64);
        let g = score(&reports, &truth, Granularity::Group).unwrap();
        let groups: std::collections::BTreeSet<_> = truth.iter().filter_map(|r| r.group_key.clone()).collect();
        prop_assert_eq!(g.tp + g.fp + g.fn_ + g.tn, groups.len() as u64);
    }
}

#[test]
fn generator_labels_every_line() {
    let corpus = generate_synthetic(&common::synthetic_manifest(), common::GENERATOR_SEED).unwrap();
    assert_eq!(corpus.records.len(), corpus.lines.len());
    assert!(corpus.lines.len() >= 10_000);
    for (i, r) in corpus.records.iter().enumerate() {
        assert_eq!(r.raw.line_no, i as u64 + 1);
        assert_eq!(r.line(), corpus.lines[i]);
        assert_eq!(r.label == Label::Anomalous, r.subkind.is_some(), "line {}", i + 1);
    }
    let counts = corpus.subkind_counts();
    for k in SUBKINDS {
        assert!(counts.get(k).copied().unwrap_or(0) > 0, "{k} missing");
    }
    let rate = corpus.anomalous() as f64 / corpus.lines.len() as f64;
    assert!((0.015..=0.03).contains(&rate), "anomaly rate {rate}");
}

fn tiny_records(n: usize) -> Vec<LabeledRecord> {
    common::clean_lines(n)
        .iter()
        .enumerate()
        .map(|(i, l)| LabeledRecord {
            raw: RawLog::from_line(i as u64 + 1, l).unwrap(),
            label: Label::Normal,
            group_key: None,
            subkind: None,
        })
        .collect()
}

#[test]
fn split_is_chronological() {
    let records = tiny_records(400);
    let mut cfg = common::fixture_config();
    cfg.seqmodel.epochs = 1;
    let rows = run_split_experiment("tiny", &records, &[0.5, 0.75], &cfg, Granularity::Line).unwrap();
    assert_eq!((rows[0].train_records, rows[0].test_records), (200, 200));
    assert_eq!((rows[1].train_records, rows[1].test_records), (300, 100));
    for r in &rows {
        assert_eq!(r.counts.tp + r.counts.fn_, 0);
        assert_eq!(r.counts.fp + r.counts.tn, r.test_records as u64);
        assert_eq!(r.line_errors, 0);
    }
}

#[test]
fn degenerate_splits_are_protocol_errors() {
    let records = tiny_records(150);
    let cfg = common::fixture_config();
    for f in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
        let r = run_split_experiment("tiny", &records, &[f], &cfg, Granularity::Line);
        assert!(matches!(r, Err(EvalError::Protocol(_))), "fraction {f}");
    }
    let r = run_split_experiment("tiny", &records[..99], &[0.5], &cfg, Granularity::Line);
    assert!(matches!(r, Err(EvalError::Protocol(_))));
    let mut shuffled = records.clone();
    shuffled.swap(3, 4);
    let r = run_split_experiment("tiny", &shuffled, &[0.5], &cfg, Granularity::Line);
    assert!(matches!(r, Err(EvalError::Protocol(_))));
}
