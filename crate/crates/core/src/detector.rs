//! Online detection over a stream of raw log lines.
//!
//! Every line is resolved to a trained template, either directly or via
//! the nearest-template fallback for lines the trained library does not
//! cover. A sliding window of the last `w` entries feeds the sequence
//! model; the entry that follows is a sequence anomaly when it is not
//! among the `g` most likely next templates. Each template also collects
//! its entries into tumbling windows of `w'`, and the key parameters of
//! a full window are checked against the per-type criteria.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::embedding::{nearest_template, vectorize_template, EmbeddingError, EmbeddingProvider, Pooling};
use crate::paramenc::resource::encode_resource;
use crate::paramenc::time::TimeError;
use crate::paramenc::{
    encode_numeric, is_well_formed_resource, parse_numeric, parse_time, strip_key, user_bucket, ParamConfig,
    ParamModels, ParamType, TemplateParams,
};
use crate::parser::{ParseError, ParsedLog, RawLog, Template, TemplateMiner};
use crate::pipeline::ModelState;
use crate::seqmodel::{forward, top_g, ModelWeights, SeqError};
use crate::util::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Candidate set size; `None` uses the sequence model's setting.
    pub g: Option<usize>,
    pub w_prime: usize,
    pub z_threshold: f64,
    /// Maximum state changes within `w'` entries; `None` means `w'/2`.
    pub freq_threshold: Option<f64>,
    pub tau_r: f64,
    pub sim_floor: f64,
    pub rare_q: f64,
    /// Entries between two sequence verdicts once the window is full.
    pub stride: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            g: None,
            w_prime: 100,
            z_threshold: 3.0,
            freq_threshold: None,
            tau_r: 0.3,
            sim_floor: 0.5,
            rare_q: 0.01,
            stride: 1,
        }
    }
}

impl DetectorConfig {
    pub fn flip_limit(&self) -> f64 {
        self.freq_threshold.unwrap_or(0.5 * self.w_prime as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    Sequence,
    Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamAnomaly {
    TimeFormat,
    TimeRange,
    UserEmpty,
    UserOutlier,
    NumericInvalid,
    NumericRange,
    StateUnseen,
    StateFlapping,
    ResourcePath,
    ResourceAssociation,
}

impl ParamAnomaly {
    pub const ALL: [ParamAnomaly; 10] = [
        ParamAnomaly::TimeFormat,
        ParamAnomaly::TimeRange,
        ParamAnomaly::UserEmpty,
        ParamAnomaly::UserOutlier,
        ParamAnomaly::NumericInvalid,
        ParamAnomaly::NumericRange,
        ParamAnomaly::StateUnseen,
        ParamAnomaly::StateFlapping,
        ParamAnomaly::ResourcePath,
        ParamAnomaly::ResourceAssociation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub line_no: u64,
    pub kind: AnomalyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subkind: Option<ParamAnomaly>,
    pub template_id: usize,
    /// False when the line was resolved through a temporary template.
    pub matched: bool,
    pub evidence: Value,
}

impl AnomalyReport {
    fn param(e: &ParsedLog, subkind: ParamAnomaly, position: usize, evidence: Value) -> Self {
        let mut ev = json!({ "position": position });
        if let (Value::Object(m), Value::Object(extra)) = (&mut ev, evidence) {
            m.extend(extra);
        }
        Self {
            line_no: e.line_no,
            kind: AnomalyKind::Parameter,
            subkind: Some(subkind),
            template_id: e.template_id,
            matched: e.matched,
            evidence: ev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("no sequence model loaded")]
    ModelMissing,
    #[error("template {0} has no fitted parameter models")]
    UnfittedTemplate(usize),
    #[error("trained template library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Model(#[from] SeqError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Sequence verdict for the entry that follows a full window.
pub fn detect_sequence(
    window_inputs: &[Vec<f64>],
    actual_next: usize,
    weights: Option<&ModelWeights>,
    g: usize,
) -> Result<Option<Value>, DetectError> {
    let w = weights.ok_or(DetectError::ModelMissing)?;
    let probs = forward(window_inputs, w)?;
    let candidates = top_g(&probs, g);
    if candidates.contains(&actual_next) {
        return Ok(None);
    }
    let p = probs.get(actual_next).copied().unwrap_or(0.0);
    Ok(Some(json!({ "candidates": candidates, "actual": actual_next, "actual_prob": p })))
}

/// Rolling per-position state kept across parameter windows.
#[derive(Debug, Clone, Default)]
pub struct PositionHistory {
    /// Last `w'` state values with their line numbers.
    states: VecDeque<(u64, String)>,
    last_instant: Option<i64>,
    flap_reported_upto: Option<u64>,
}

pub type TemplateHistory = BTreeMap<usize, PositionHistory>;

fn check_flapping(
    e: &ParsedLog,
    position: usize,
    value: &str,
    h: &mut PositionHistory,
    cfg: &DetectorConfig,
    out: &mut Vec<AnomalyReport>,
) {
    h.states.push_back((e.line_no, value.to_string()));
    while h.states.len() > cfg.w_prime {
        h.states.pop_front();
    }
    let flips: Vec<u64> = h
        .states
        .iter()
        .zip(h.states.iter().skip(1))
        .filter(|(a, b)| a.1 != b.1)
        .map(|(_, b)| b.0)
        .collect();
    if (flips.len() as f64) <= cfg.flip_limit() {
        return;
    }
    for &line in &flips {
        if h.flap_reported_upto.is_some_and(|u| line <= u) {
            continue;
        }
        let mut report = AnomalyReport::param(
            e,
            ParamAnomaly::StateFlapping,
            position,
            json!({ "flips": flips.len(), "window": h.states.len() }),
        );
        report.line_no = line;
        out.push(report);
    }
    h.flap_reported_upto = Some(e.line_no);
}

fn check_entry(
    e: &ParsedLog,
    tp: &TemplateParams,
    pcfg: &ParamConfig,
    cfg: &DetectorConfig,
    history: &mut TemplateHistory,
    out: &mut Vec<AnomalyReport>,
) {
    for slot in &tp.layout.slots {
        let pos = slot.position;
        let m = &tp.positions[pos];
        let (_, value) = strip_key(&e.params[pos]);
        let h = history.entry(pos).or_default();
        let mut flag = |kind: ParamAnomaly, ev: Value| out.push(AnomalyReport::param(e, kind, pos, ev));
        match m.ptype {
            ParamType::Time => match parse_time(value) {
                Err(TimeError::Format) => flag(ParamAnomaly::TimeFormat, json!({ "value": value })),
                Err(TimeError::Range) => flag(ParamAnomaly::TimeRange, json!({ "value": value })),
                Ok(t) => {
                    if let Some(i) = t.instant_ms() {
                        if let Some(prev) = h.last_instant.filter(|p| i < *p) {
                            flag(ParamAnomaly::TimeRange, json!({ "value": value, "previous_ms": prev, "order": "decreasing" }));
                        }
                        h.last_instant = Some(i);
                    }
                }
            },
            ParamType::UserId => {
                if value.is_empty() {
                    flag(ParamAnomaly::UserEmpty, json!({ "value": "" }));
                } else {
                    let total: u32 = m.user_buckets.values().sum();
                    let bucket = user_bucket(value);
                    let count = m.user_buckets.get(&bucket).copied().unwrap_or(0);
                    let freq = if total == 0 { 0.0 } else { f64::from(count) / f64::from(total) };
                    if freq < cfg.rare_q {
                        flag(ParamAnomaly::UserOutlier, json!({ "value": value, "bucket_freq": freq }));
                    }
                }
            }
            ParamType::Numeric => match parse_numeric(value) {
                Err(_) => flag(ParamAnomaly::NumericInvalid, json!({ "value": value })),
                Ok(x) => {
                    let b = m.numeric.as_ref().expect("numeric baseline");
                    let z = encode_numeric(x, b, pcfg.eps, pcfg.z_cap);
                    if z.abs() > cfg.z_threshold {
                        flag(ParamAnomaly::NumericRange, json!({ "value": value, "z": z }));
                    }
                }
            },
            ParamType::State => {
                let r = m.states.as_ref().expect("state registry");
                if r.index(value).is_none() {
                    flag(ParamAnomaly::StateUnseen, json!({ "value": value, "registry": r.states() }));
                }
                if !value.is_empty() {
                    check_flapping(e, pos, value, h, cfg, out);
                }
            }
            ParamType::ResourceId => {
                if value.is_empty() || !is_well_formed_resource(value) {
                    flag(ParamAnomaly::ResourcePath, json!({ "value": value }));
                } else {
                    let model = m.tfidf.as_ref().expect("resource vocabulary");
                    let (v, oov) = encode_resource(value, model);
                    let sim = m.centroid.as_deref().and_then(|c| cosine(&v, c)).unwrap_or(0.0);
                    if sim < cfg.tau_r {
                        flag(ParamAnomaly::ResourceAssociation, json!({ "value": value, "similarity": sim, "oov": oov }));
                    }
                }
            }
            ParamType::Unknown => {}
        }
    }
}

/// Check one parameter window of a single template. Entries whose
/// parameter count does not fit the template are skipped.
pub fn detect_parameters(
    window: &[ParsedLog],
    models: &ParamModels,
    cfg: &DetectorConfig,
    history: &mut TemplateHistory,
) -> Result<Vec<AnomalyReport>, DetectError> {
    let Some(first) = window.first() else {
        return Ok(Vec::new());
    };
    let tp = models
        .template(first.template_id)
        .ok_or(DetectError::UnfittedTemplate(first.template_id))?;
    let mut out = Vec::new();
    for e in window {
        if e.template_id == tp.template_id && e.params.len() == tp.positions.len() {
            check_entry(e, tp, &models.config, cfg, history, &mut out);
        }
    }
    Ok(out)
}

/// How a line that matched no trained template was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "resolution", rename_all = "snake_case")]
pub enum Resolution {
    Trained,
    Adopted { template_id: usize, similarity: f64 },
    Novel { nearest: usize, similarity: f64 },
}

/// Nearest trained template for a template outside the trained library.
pub fn handle_unmatched(
    template: &Template,
    provider: &dyn EmbeddingProvider,
    pooling: Pooling,
    library: &[(usize, Vec<f64>)],
    sim_floor: f64,
) -> Result<Resolution, DetectError> {
    if library.is_empty() {
        return Err(DetectError::EmptyLibrary);
    }
    let v = vectorize_template(template, provider, pooling)?;
    let (id, sim) = nearest_template(&v.values, library)?;
    Ok(if sim >= sim_floor {
        Resolution::Adopted { template_id: id, similarity: sim }
    } else {
        Resolution::Novel { nearest: id, similarity: sim }
    })
}

/// Per-line trace of what the detector did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineOutcome {
    pub line_no: u64,
    #[serde(flatten)]
    pub resolution: Resolution,
}

/// Streaming detector bound to one trained model.
pub struct Detector<'m> {
    state: &'m ModelState,
    cfg: DetectorConfig,
    miner: TemplateMiner,
    library: Vec<(usize, Vec<f64>)>,
    window: VecDeque<Vec<f64>>,
    since_full: usize,
    buffers: BTreeMap<usize, Vec<ParsedLog>>,
    history: BTreeMap<usize, TemplateHistory>,
    warmed: BTreeSet<usize>,
    resolved: HashMap<String, Resolution>,
    outcomes: Vec<LineOutcome>,
}

impl<'m> Detector<'m> {
    pub fn new(state: &'m ModelState) -> Self {
        Self::with_config(state, state.config.detector.clone())
    }

    pub fn with_config(state: &'m ModelState, cfg: DetectorConfig) -> Self {
        Self {
            state,
            cfg,
            miner: state.miner.clone(),
            library: state.template_vectors.iter().cloned().enumerate().collect(),
            window: VecDeque::new(),
            since_full: 0,
            buffers: BTreeMap::new(),
            history: BTreeMap::new(),
            warmed: BTreeSet::new(),
            resolved: HashMap::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn outcomes(&self) -> &[LineOutcome] {
        &self.outcomes
    }

    fn resolve_overlay(&mut self, template_id: usize) -> Result<Resolution, DetectError> {
        let template = self.miner.template(template_id).expect("parsed id exists").clone();
        let key = template.to_string();
        if let Some(r) = self.resolved.get(&key) {
            return Ok(*r);
        }
        let r = handle_unmatched(
            &template,
            &self.state.embeddings,
            self.state.config.embedding.pooling,
            &self.library,
            self.cfg.sim_floor,
        )?;
        self.resolved.insert(key, r);
        Ok(r)
    }

    /// Process one line; returns the reports it triggered. Parameter
    /// reports may point at earlier lines of the same template.
    pub fn push(&mut self, raw: &RawLog) -> Result<Vec<AnomalyReport>, DetectError> {
        let parsed = self.miner.parse_line(raw)?;
        let trained = self.state.classes();
        let mut out = Vec::new();
        let (entry, resolution) = if parsed.template_id < trained {
            (parsed, Resolution::Trained)
        } else {
            match self.resolve_overlay(parsed.template_id)? {
                Resolution::Adopted { template_id, similarity } => {
                    let fits = self
                        .state
                        .params
                        .template(template_id)
                        .is_some_and(|t| t.positions.len() == parsed.params.len());
                    let entry = ParsedLog {
                        template_id,
                        params: if fits { parsed.params } else { Vec::new() },
                        line_no: parsed.line_no,
                        matched: false,
                    };
                    (entry, Resolution::Adopted { template_id, similarity })
                }
                r @ Resolution::Novel { nearest, similarity } => {
                    let template = self.miner.template(parsed.template_id).expect("parsed id exists");
                    out.push(AnomalyReport {
                        line_no: parsed.line_no,
                        kind: AnomalyKind::Sequence,
                        subkind: None,
                        template_id: parsed.template_id,
                        matched: false,
                        evidence: json!({
                            "novel_template": template.to_string(),
                            "nearest": nearest,
                            "similarity": similarity,
                        }),
                    });
                    self.outcomes.push(LineOutcome { line_no: parsed.line_no, resolution: r });
                    return Ok(out);
                }
                Resolution::Trained => unreachable!("overlay ids are never trained"),
            }
        };
        self.outcomes.push(LineOutcome { line_no: entry.line_no, resolution });

        let mut input = self.state.template_vectors[entry.template_id].clone();
        input.extend(self.state.params.model_features(entry.template_id, &entry.params));
        let w = self.state.config.seqmodel.window_w;
        if self.window.len() == w {
            if self.since_full.is_multiple_of(self.cfg.stride.max(1)) {
                let inputs: Vec<Vec<f64>> = self.window.iter().cloned().collect();
                if let Some(evidence) =
                    detect_sequence(&inputs, entry.template_id, Some(&self.state.weights), self.state.effective_g())?
                {
                    out.push(AnomalyReport {
                        line_no: entry.line_no,
                        kind: AnomalyKind::Sequence,
                        subkind: None,
                        template_id: entry.template_id,
                        matched: entry.matched,
                        evidence,
                    });
                }
            }
            self.since_full += 1;
            self.window.pop_front();
        }
        self.window.push_back(input);

        if !entry.params.is_empty() && self.state.params.template(entry.template_id).is_some() {
            let tid = entry.template_id;
            let buf = self.buffers.entry(tid).or_default();
            buf.push(entry);
            if buf.len() >= self.cfg.w_prime {
                let batch = std::mem::take(buf);
                self.warmed.insert(tid);
                let h = self.history.entry(tid).or_default();
                out.extend(detect_parameters(&batch, &self.state.params, &self.cfg, h)?);
            }
        }
        Ok(out)
    }

    /// End of stream: check partial parameter windows of templates that
    /// already completed at least one full window.
    pub fn finish(&mut self) -> Result<Vec<AnomalyReport>, DetectError> {
        let mut out = Vec::new();
        let buffers = std::mem::take(&mut self.buffers);
        for (tid, batch) in buffers {
            if self.warmed.contains(&tid) && !batch.is_empty() {
                let h = self.history.entry(tid).or_default();
                out.extend(detect_parameters(&batch, &self.state.params, &self.cfg, h)?);
            }
        }
        Ok(out)
    }
}

/// Result of running the detector over a whole stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    /// Reports sorted by line number.
    pub reports: Vec<AnomalyReport>,
    /// Lines that failed to process, with the error message.
    pub errors: Vec<(u64, String)>,
    pub outcomes: Vec<LineOutcome>,
}

/// Run a fresh detector over `(line_no, text)` pairs. A failing line is
/// recorded and skipped; the stream goes on.
pub fn stream_detect<I, S>(lines: I, state: &ModelState) -> StreamOutput
where
    I: IntoIterator<Item = (u64, S)>,
    S: AsRef<str>,
{
    run_stream(
        lines.into_iter().map(|(n, t)| (n, RawLog::from_line(n, t.as_ref()))),
        state,
    )
}

/// Same as [`stream_detect`] over already split records.
pub fn stream_detect_raw<'a, I>(raws: I, state: &ModelState) -> StreamOutput
where
    I: IntoIterator<Item = &'a RawLog>,
{
    run_stream(raws.into_iter().map(|r| (r.line_no, Ok(r.clone()))), state)
}

fn run_stream<I>(items: I, state: &ModelState) -> StreamOutput
where
    I: Iterator<Item = (u64, Result<RawLog, ParseError>)>,
{
    let mut det = Detector::new(state);
    let mut out = StreamOutput::default();
    for (line_no, raw) in items {
        match raw.map_err(DetectError::from).and_then(|raw| det.push(&raw)) {
            Ok(r) => out.reports.extend(r),
            Err(e) => out.errors.push((line_no, e.to_string())),
        }
    }
    match det.finish() {
        Ok(r) => out.reports.extend(r),
        Err(e) => out.errors.push((u64::MAX, e.to_string())),
    }
    out.reports.sort_by_key(|r| r.line_no);
    out.outcomes = det.outcomes;
    out
}

/// Reports as JSON Lines.
pub fn reports_jsonl(reports: &[AnomalyReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
        .collect()
}
