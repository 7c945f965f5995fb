#![allow(dead_code)]

use std::sync::OnceLock;

use tplad::eval::synth::{generate_synthetic, Manifest};
use tplad::pipeline::{train_offline_lines, ModelState, PipelineConfig};

pub const GENERATOR_SEED: u64 = 7;

pub fn fixture_config() -> PipelineConfig {
    PipelineConfig::from_json(include_str!("../../fixtures/fixture.config.json")).unwrap()
}

pub fn synthetic_manifest() -> Manifest {
    Manifest::from_json(include_str!("../../fixtures/synthetic.json")).unwrap()
}

pub fn holdout_manifest() -> Manifest {
    Manifest::from_json(include_str!("../../fixtures/holdout.json")).unwrap()
}

/// Clean lines from the synthetic workflows.
pub fn clean_lines(n: usize) -> Vec<String> {
    let mut m = synthetic_manifest();
    m.lines = n;
    m.anomaly_rate = 0.0;
    generate_synthetic(&m, GENERATOR_SEED).unwrap().lines
}

/// A small model trained once per test binary on clean lines.
pub fn small_model() -> &'static (ModelState, Vec<String>) {
    static MODEL: OnceLock<(ModelState, Vec<String>)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let lines = clean_lines(1500);
        let mut cfg = fixture_config();
        cfg.seqmodel.epochs = 3;
        let (state, _) = train_offline_lines(&lines, &cfg).unwrap();
        (state, lines)
    })
}
