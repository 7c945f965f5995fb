//! `tplad`: train, detect, evaluate and inspect from the command line.
//!
//! Exit codes: 0 clean, 1 anomalies reported, 2 error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tplad::detector::{reports_jsonl, stream_detect, Resolution};
use tplad::eval::synth::{generate_synthetic, Manifest};
use tplad::eval::{load_dataset, results_table, run_split_experiment, DatasetFormat, Granularity};
use tplad::parser::{RawLog, TemplateMiner};
use tplad::pipeline::{read_lines, train_offline, ModelState, PipelineConfig};

#[derive(Parser)]
#[command(name = "tplad", version, about = "Log anomaly detection from templates and key parameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine templates and print one parsed record per line as JSON.
    Parse {
        #[arg(long, default_value = "-")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the template library here.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Run every offline stage and write a model file.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream lines through a trained model and emit JSONL reports.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "-")]
        input: PathBuf,
        /// Report file; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Number of the first input line.
        #[arg(long, default_value_t = 1)]
        first_line: u64,
        #[arg(long)]
        g: Option<usize>,
        #[arg(long)]
        w_prime: Option<usize>,
        #[arg(long)]
        z_threshold: Option<f64>,
        #[arg(long)]
        sim_floor: Option<f64>,
        #[arg(long)]
        tau_r: Option<f64>,
    },
    /// Chronological split experiment on a labeled dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "line_labeled")]
        format: DatasetFormat,
        #[arg(long, value_delimiter = ',', default_value = "0.8")]
        fractions: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "line")]
        granularity: GranularityArg,
        /// Generator seed for synthetic manifests.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write the result rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a labeled synthetic corpus from a manifest.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump parts of a model file as JSON.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "summary")]
        what: InspectWhat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Line,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum InspectWhat {
    Summary,
    Config,
    Templates,
    Vectors,
    Baselines,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => PipelineConfig::default(),
    };
    Ok(cfg.with_env_seed()?)
}

/// Write to a temporary sibling, then rename over the target.
fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let result = std::fs::write(&tmp, data).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse(input: &Path, config: Option<&Path>, templates: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let mut miner = TemplateMiner::new(cfg.parser);
    let mut out = String::new();
    for (i, line) in read_lines(input)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw = RawLog::from_line(i as u64 + 1, line)?;
        let parsed = miner.parse_line(&raw)?;
        out.push_str(&serde_json::to_string(&parsed)?);
        out.push('\n');
    }
    emit(&out)?;
    if let Some(p) = templates {
        write_atomic(p, miner.library_json().as_bytes())?;
    }
    eprintln!("templates={}", miner.len());
    Ok(ExitCode::SUCCESS)
}

fn train(input: &Path, config: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let (state, summary) = train_offline(input, &cfg)?;
    state.save(out)?;
    eprint!("{summary}");
    eprintln!("config_hash={}", state.config_hash);
    Ok(ExitCode::SUCCESS)
}

struct Overrides {
    g: Option<usize>,
    w_prime: Option<usize>,
    z_threshold: Option<f64>,
    sim_floor: Option<f64>,
    tau_r: Option<f64>,
}

fn detect(model: &Path, input: &Path, report: Option<&Path>, first_line: u64, o: Overrides) -> Result<ExitCode> {
    let mut state = ModelState::load(model).with_context(|| format!("loading {}", model.display()))?;
    let d = &mut state.config.detector;
    if o.g.is_some() {
        d.g = o.g;
    }
    if let Some(v) = o.w_prime {
        if v == 0 {
            bail!("--w-prime must be positive");
        }
        d.w_prime = v;
    }
    d.z_threshold = o.z_threshold.unwrap_or(d.z_threshold);
    d.sim_floor = o.sim_floor.unwrap_or(d.sim_floor);
    d.tau_r = o.tau_r.unwrap_or(d.tau_r);

    let lines = read_lines(input)?;
    let numbered = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (first_line + i as u64, l.as_str()));
    let output = stream_detect(numbered, &state);
    let jsonl = reports_jsonl(&output.reports);
    match report {
        Some(p) => write_atomic(p, jsonl.as_bytes())?,
        None => emit(&jsonl)?,
    }
    for (line, e) in &output.errors {
        eprintln!("line {line}: {e}");
    }
    let adopted = output.outcomes.iter().filter(|o| matches!(o.resolution, Resolution::Adopted { .. })).count();
    let novel = output.outcomes.iter().filter(|o| matches!(o.resolution, Resolution::Novel { .. })).count();
    eprintln!(
        "lines={} reports={} adopted={adopted} novel={novel} errors={}",
        output.outcomes.len() + output.errors.len(),
        output.reports.len(),
        output.errors.len()
    );
    Ok(if output.reports.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &Path,
    format: DatasetFormat,
    fractions: &[f64],
    config: Option<&Path>,
    granularity: GranularityArg,
    seed: u64,
    json_out: Option<&Path>,
) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let records = load_dataset(dataset, format, seed)?;
    let granularity = match granularity {
        GranularityArg::Line => Granularity::Line,
        GranularityArg::Group => Granularity::Group,
    };
    let name = dataset.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    let rows = run_split_experiment(&name, &records, fractions, &cfg, granularity)?;
    emit(&results_table(&rows))?;
    if let Some(p) = json_out {
        write_atomic(p, serde_json::to_string_pretty(&rows)?.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(manifest: &Path, seed: u64, out: &Path) -> Result<ExitCode> {
    let m = Manifest::load(manifest)?;
    let corpus = generate_synthetic(&m, seed)?;
    corpus.write(out)?;
    eprintln!("lines={} anomalous={} subkinds={:?}", corpus.lines.len(), corpus.anomalous(), corpus.subkind_counts());
    Ok(ExitCode::SUCCESS)
}

fn inspect(model: &Path, what: InspectWhat) -> Result<ExitCode> {
    let state = ModelState::load(model).with_context(|| format!("loading {}", model.display()))?;
    let doc = match what {
        InspectWhat::Summary => json!({
            "config_hash": state.config_hash,
            "templates": state.classes(),
            "vocabulary": state.embeddings.table().len(),
            "key_positions": state.params.key_positions(),
            "weights": state.weights.data.len(),
            "dims": state.weights.dims,
        }),
        InspectWhat::Config => serde_json::to_value(&state.config)?,
        InspectWhat::Templates => serde_json::from_str(&state.miner.library_json())?,
        InspectWhat::Vectors => json!(state
            .template_vectors
            .iter()
            .enumerate()
            .map(|(i, v)| json!({ "template": state.miner.template(i).map(|t| t.to_string()), "vector": v }))
            .collect::<Vec<_>>()),
        InspectWhat::Baselines => serde_json::to_value(&state.params)?,
    };
    emit(&(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Parse { input, config, templates } => parse(&input, config.as_deref(), templates.as_deref()),
        Command::Train { input, config, out } => train(&input, config.as_deref(), &out),
        Command::Detect { model, input, report, first_line, g, w_prime, z_threshold, sim_floor, tau_r } => detect(
            &model,
            &input,
            report.as_deref(),
            first_line,
            Overrides { g, w_prime, z_threshold, sim_floor, tau_r },
        ),
        Command::Eval { dataset, format, fractions, config, granularity, seed, json } => {
            eval(&dataset, format, &fractions, config.as_deref(), granularity, seed, json.as_deref())
        }
        Command::Synth { manifest, seed, out } => synth(&manifest, seed, &out),
        Command::Inspect { model, what } => inspect(&model, what),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
