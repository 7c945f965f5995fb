//! Offline training and the online detection wrapper.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::time::{Duration, Instant};

use super::{ModelState, PipelineConfig, PipelineError, ProviderConfig};
use crate::detector::{stream_detect, StreamOutput};
use crate::embedding::external::SubprocessProvider;
use crate::embedding::skipgram::train_builtin_embeddings;
use crate::embedding::{build_word_table, template_words, vectorize_template, StoredEmbeddings};
use crate::paramenc::ParamModels;
use crate::parser::{ParsedLog, RawLog, TemplateMiner};
use crate::seqmodel::{train, Dims, TrainingWindow};
use crate::util::sub_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub lines: usize,
    pub blank_lines: usize,
    pub templates: usize,
    pub vocabulary: usize,
    pub key_positions: usize,
    pub windows: usize,
    pub epoch_losses: Vec<f64>,
    pub timings: Vec<StageTiming>,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "lines={} templates={} vocabulary={} key_positions={} windows={}",
            self.lines, self.templates, self.vocabulary, self.key_positions, self.windows
        )?;
        if let (Some(first), Some(last)) = (self.epoch_losses.first(), self.epoch_losses.last()) {
            writeln!(f, "loss {first:.4} -> {last:.4} over {} epochs", self.epoch_losses.len())?;
        }
        for t in &self.timings {
            writeln!(f, "{:<10} {:>8.3}s", t.stage, t.elapsed.as_secs_f64())?;
        }
        Ok(())
    }
}

/// Read all lines from a file, or from stdin for `-`.
pub fn read_lines(path: &Path) -> Result<Vec<String>, PipelineError> {
    let reader: Box<dyn Read> = if path.as_os_str() == "-" {
        Box::new(std::io::stdin())
    } else {
        Box::new(std::fs::File::open(path)?)
    };
    Ok(BufReader::new(reader).lines().collect::<Result<_, _>>()?)
}

pub fn train_offline(path: &Path, config: &PipelineConfig) -> Result<(ModelState, TrainSummary), PipelineError> {
    train_offline_lines(&read_lines(path)?, config)
}

/// Run every offline stage over in-memory lines (line numbers start at 1).
/// Blank lines are skipped.
pub fn train_offline_lines<S: AsRef<str>>(
    lines: &[S],
    config: &PipelineConfig,
) -> Result<(ModelState, TrainSummary), PipelineError> {
    let mut raws = Vec::new();
    let mut blank_lines = 0;
    for (i, line) in lines.iter().enumerate() {
        let line = line.as_ref();
        if line.trim().is_empty() {
            blank_lines += 1;
            continue;
        }
        raws.push(RawLog::from_line(i as u64 + 1, line).map_err(|e| PipelineError::stage("parse", e))?);
    }
    let (state, mut summary) = train_offline_records(&raws, config)?;
    summary.blank_lines = blank_lines;
    Ok((state, summary))
}

/// Run every offline stage over records in stream order.
pub fn train_offline_records(raws: &[RawLog], config: &PipelineConfig) -> Result<(ModelState, TrainSummary), PipelineError> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &'static str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming { stage, elapsed: clock.elapsed() });
        clock = Instant::now();
    };

    let mut miner = TemplateMiner::new(config.parser.clone());
    for raw in raws {
        miner.parse_line(raw).map_err(|e| PipelineError::stage("parse", e))?;
    }
    if raws.is_empty() {
        return Err(PipelineError::Format("[parse] no log lines in input".into()));
    }
    miner.freeze();
    let mut parsed: Vec<ParsedLog> = Vec::with_capacity(raws.len());
    for raw in raws {
        if let Some(p) = miner.match_line(raw).map_err(|e| PipelineError::stage("parse", e))? {
            parsed.push(p);
        }
    }
    lap("parse", &mut timings);

    let seed = config.seed;
    let templates = miner.templates().to_vec();
    let table = build_word_table(&templates).map_err(|e| PipelineError::stage("embed", e))?;
    let embeddings = match &config.embedding.provider {
        ProviderConfig::Builtin => {
            let corpus: Vec<Vec<String>> = parsed.iter().map(|p| template_words(&templates[p.template_id])).collect();
            train_builtin_embeddings(&corpus, &table, &config.embedding.skipgram, sub_seed(seed, "skipgram"))
        }
        ProviderConfig::External { program, args, dim } => SubprocessProvider::spawn(program, args, *dim)
            .and_then(|p| StoredEmbeddings::from_provider(&p, &table)),
    }
    .map_err(|e| PipelineError::stage("embed", e))?;
    let template_vectors: Vec<Vec<f64>> = templates
        .iter()
        .map(|t| vectorize_template(t, &embeddings, config.embedding.pooling).map(|v| v.values))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::stage("embed", e))?;
    lap("embed", &mut timings);

    let params = ParamModels::fit(&templates, &parsed, &config.paramenc, sub_seed(seed, "keysel"));
    lap("params", &mut timings);

    let steps: Vec<Vec<f64>> = parsed
        .iter()
        .map(|p| {
            let mut v = template_vectors[p.template_id].clone();
            v.extend(params.model_features(p.template_id, &p.params));
            v
        })
        .collect();
    let w = config.seqmodel.window_w;
    if w < 2 {
        return Err(PipelineError::Config("seqmodel.window_w must be at least 2".into()));
    }
    let windows: Vec<TrainingWindow> = (0..steps.len().saturating_sub(w))
        .map(|i| TrainingWindow { inputs: &steps[i..i + w], target: parsed[i + w].template_id })
        .collect();
    let dims = Dims {
        input: embeddings_dim(&template_vectors) + params.max_width(),
        hidden: config.seqmodel.hidden_units,
        attn: config.seqmodel.hidden_units,
        classes: templates.len(),
    };
    let report = train(&windows, dims, &config.seqmodel, sub_seed(seed, "seqmodel"))
        .map_err(|e| PipelineError::stage("seqmodel", e))?;
    lap("seqmodel", &mut timings);

    let summary = TrainSummary {
        lines: raws.len(),
        blank_lines: 0,
        templates: templates.len(),
        vocabulary: table.len(),
        key_positions: params.key_positions().len(),
        windows: windows.len(),
        epoch_losses: report.epoch_losses,
        timings,
    };
    let state = ModelState {
        config: config.clone(),
        config_hash: config.config_hash(),
        miner,
        embeddings,
        template_vectors,
        params,
        weights: report.weights,
    };
    Ok((state, summary))
}

fn embeddings_dim(vectors: &[Vec<f64>]) -> usize {
    vectors.first().map_or(0, Vec::len)
}

/// Detect over lines numbered from `first_line_no`.
pub fn detect_online<S: AsRef<str>>(state: &ModelState, lines: &[S], first_line_no: u64) -> StreamOutput {
    let numbered = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.as_ref().trim().is_empty())
        .map(|(i, l)| (first_line_no + i as u64, l.as_ref()));
    stream_detect(numbered, state)
}
