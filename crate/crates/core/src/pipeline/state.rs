//! The single-file model bundle.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TPLADMS\0"
//! version  u32
//! header   u64 length + UTF-8 JSON (config, parser tree, embeddings,
//!          template vectors, parameter models)
//! weights  u64 length + sequence model blob
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::embedding::StoredEmbeddings;
use crate::paramenc::ParamModels;
use crate::parser::TemplateMiner;
use crate::seqmodel::ModelWeights;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TPLADMS\0";

/// Everything online detection needs, learned offline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: PipelineConfig,
    pub config_hash: String,
    /// Frozen template miner: the trained library and its prefix tree.
    pub miner: TemplateMiner,
    pub embeddings: StoredEmbeddings,
    /// One vector per trained template, indexed by template id.
    pub template_vectors: Vec<Vec<f64>>,
    pub params: ParamModels,
    pub weights: ModelWeights,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config_hash: String,
    config: PipelineConfig,
    parser: TemplateMiner,
    embeddings: serde_json::Value,
    template_vectors: Vec<Vec<f64>>,
    params: ParamModels,
}

impl ModelState {
    /// Number of trained templates, which is also the class count.
    pub fn classes(&self) -> usize {
        self.template_vectors.len()
    }

    /// Candidate set size actually used: at most one below the class count.
    pub fn effective_g(&self) -> usize {
        let g = self.config.detector.g.unwrap_or(self.config.seqmodel.candidate_g);
        g.min(self.classes().saturating_sub(1)).max(1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            parser: self.miner.clone(),
            embeddings: serde_json::from_str(&self.embeddings.to_json()).expect("embedding json"),
            template_vectors: self.template_vectors.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let weights = self.weights.to_bytes();
        let mut out = Vec::with_capacity(28 + json.len() + weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let bad = |m: String| PipelineError::Format(format!("model file: {m}"));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version > FORMAT_VERSION {
            return Err(PipelineError::Version { found: version, supported: FORMAT_VERSION });
        }
        let mut at = 12usize;
        let mut section = |what: &str| -> Result<&[u8], PipelineError> {
            let len_end = at.checked_add(8).filter(|e| *e <= bytes.len()).ok_or_else(|| bad(format!("truncated {what} length")))?;
            let len = u64::from_le_bytes(bytes[at..len_end].try_into().unwrap());
            let end = usize::try_from(len)
                .ok()
                .and_then(|l| len_end.checked_add(l))
                .filter(|e| *e <= bytes.len())
                .ok_or_else(|| bad(format!("truncated {what}")))?;
            at = end;
            Ok(&bytes[len_end..end])
        };
        let header = section("header")?;
        let weights = section("weights")?;
        if at != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        let h: Header = serde_json::from_slice(header).map_err(|e| bad(e.to_string()))?;
        let embeddings = StoredEmbeddings::from_json(&h.embeddings.to_string()).map_err(|e| bad(e.to_string()))?;
        let weights = ModelWeights::from_bytes(weights).map_err(|e| bad(e.to_string()))?;
        if h.template_vectors.len() != h.parser.protected_below() || weights.dims.classes != h.template_vectors.len() {
            return Err(bad("class count disagrees between sections".into()));
        }
        Ok(Self {
            config: h.config,
            config_hash: h.config_hash,
            miner: h.parser,
            embeddings,
            template_vectors: h.template_vectors,
            params: h.params,
            weights,
        })
    }

    /// Write to a temporary sibling, then rename over the target.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = path.with_extension("tmp-write");
        let result = (|| {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)
        })();
        if result.is_err() {
            let _ = std::fs::remove_file(&tmp);
        }
        Ok(result?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
