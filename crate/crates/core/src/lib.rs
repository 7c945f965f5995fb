//! Unsupervised log anomaly detection from event templates and key parameters.
//!
//! The offline side mines templates from historical logs ([`parser`]),
//! turns templates into semantic vectors ([`embedding`]), encodes typed
//! parameters ([`paramenc`]) and trains a bidirectional LSTM with attention
//! to predict the next template ([`seqmodel`]). The online side
//! ([`detector`]) flags sequence anomalies and parameter anomalies, falling
//! back to the nearest trained template for logs that match nothing.
//! [`pipeline`] ties the stages together and [`eval`] scores them.

pub mod detector;
pub mod embedding;
pub mod eval;
pub mod paramenc;
pub mod parser;
pub mod pipeline;
pub mod seqmodel;
pub mod util;

pub use detector::{AnomalyKind, AnomalyReport, ParamAnomaly};
pub use parser::{ParsedLog, RawLog, Template, TemplateMiner};
pub use pipeline::{ModelState, PipelineConfig};
