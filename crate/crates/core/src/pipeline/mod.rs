//! Configuration, the persisted model bundle, and the offline and online
//! drivers.

mod state;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::embedding::skipgram::SkipGramConfig;
use crate::embedding::Pooling;
use crate::paramenc::ParamConfig;
use crate::parser::ParserConfig;
use crate::seqmodel::SeqModelConfig;
use crate::util::hex;

pub use state::{ModelState, FORMAT_VERSION};
pub use train::{detect_online, read_lines, train_offline, train_offline_lines, train_offline_records, StageTiming, TrainSummary};

pub const SEED_ENV: &str = "TPLAD_SEED";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
    #[error("invalid input: {0}")]
    Format(String),
    #[error("model file version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }
}

/// Where word vectors come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Skip-gram trained on the historical template stream.
    #[default]
    Builtin,
    /// A subprocess speaking the JSON-lines word vector protocol.
    External { program: String, args: Vec<String>, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub provider: ProviderConfig,
    pub skipgram: SkipGramConfig,
    pub pooling: Pooling,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::Builtin,
            skipgram: SkipGramConfig::default(),
            pooling: Pooling::WeightedMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub parser: ParserConfig,
    pub embedding: EmbeddingConfig,
    pub paramenc: ParamConfig,
    pub seqmodel: SeqModelConfig,
    pub detector: DetectorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            parser: ParserConfig::default(),
            embedding: EmbeddingConfig::default(),
            paramenc: ParamConfig::default(),
            seqmodel: SeqModelConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(json).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Apply the seed override from the environment, if set.
    pub fn with_env_seed(mut self) -> Result<Self, PipelineError> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| PipelineError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"seed": 1, "parser": {"depth": 5}}"#).is_ok());
        assert!(PipelineConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"parser": {"dpth": 5}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&a.canonical_json())
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
