mod common;

use tplad::detector::stream_detect;
use tplad::pipeline::{train_offline_lines, ModelState, PipelineConfig, PipelineError};

fn quick_config() -> PipelineConfig {
    let mut cfg = common::fixture_config();
    cfg.seqmodel.epochs = 1;
    cfg.seqmodel.hidden_units = 8;
    cfg.embedding.skipgram.epochs = 1;
    cfg
}

#[test]
fn saved_model_round_trips_byte_for_byte() {
    let (state, _) = common::small_model();
    let bytes = state.to_bytes();
    let back = ModelState::from_bytes(&bytes).unwrap();
    assert_eq!(&back, state);
    assert_eq!(back.to_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    state.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(&ModelState::load(&path).unwrap(), state);
}

#[test]
fn loaded_model_detects_identically() {
    let (state, lines) = common::small_model();
    let back = ModelState::from_bytes(&state.to_bytes()).unwrap();
    let numbered = || lines.iter().take(400).enumerate().map(|(i, l)| (i as u64 + 1, l.as_str()));
    assert_eq!(stream_detect(numbered(), state), stream_detect(numbered(), &back));
}

#[test]
fn newer_versions_are_refused() {
    let (state, _) = common::small_model();
    let mut bytes = state.to_bytes();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(ModelState::from_bytes(&bytes), Err(PipelineError::Version { found: 99, supported: 1 })));
}

#[test]
fn damaged_files_are_format_errors() {
    let (state, _) = common::small_model();
    let bytes = state.to_bytes();
    assert!(matches!(ModelState::from_bytes(&bytes[..bytes.len() - 3]), Err(PipelineError::Format(_))));
    assert!(matches!(ModelState::from_bytes(b"hello"), Err(PipelineError::Format(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(ModelState::from_bytes(&extra), Err(PipelineError::Format(_))));
}

#[test]
fn empty_input_is_a_format_error() {
    let cfg = quick_config();
    assert!(matches!(train_offline_lines::<&str>(&[], &cfg), Err(PipelineError::Format(_))));
    assert!(matches!(train_offline_lines(&["", "   "], &cfg), Err(PipelineError::Format(_))));
}

#[test]
fn training_is_deterministic() {
    let lines = common::clean_lines(300);
    let cfg = quick_config();
    let (a, sa) = train_offline_lines(&lines, &cfg).unwrap();
    let (b, sb) = train_offline_lines(&lines, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(sa.epoch_losses, sb.epoch_losses);
    let mut other = cfg.clone();
    other.seed += 1;
    let (c, _) = train_offline_lines(&lines, &other).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
    assert_ne!(a.config_hash, c.config_hash);
}

#[test]
fn summary_counts_blank_lines() {
    let mut lines = common::clean_lines(300);
    lines.insert(10, String::new());
    let (state, summary) = train_offline_lines(&lines, &quick_config()).unwrap();
    assert_eq!(summary.blank_lines, 1);
    assert_eq!(summary.lines, 300);
    assert_eq!(summary.templates, state.classes());
    assert_eq!(summary.windows, 300 - state.config.seqmodel.window_w);
}
