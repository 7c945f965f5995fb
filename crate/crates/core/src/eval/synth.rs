//! Labeled synthetic corpora from a JSON manifest.
//!
//! A manifest lists templates with typed slots and a workflow process: each
//! workflow is a fixed run of template steps, and when one ends the next is
//! drawn uniformly from its `next` list. Slot syntax inside a template
//! token:
//!
//! - `{time}`: the stream clock, ISO-8601 with milliseconds;
//! - `{user}`: one id from a fixed pool;
//! - `{num:LO:HI}`: uniform integer;
//! - `{state:a|b|c}`: a sticky state that switches with `state_switch`;
//! - `{path:/prefix/:N}`: one of `N` files under a shared prefix.
//!
//! Anomalies are injected with exact bookkeeping: sequence jumps move into
//! the middle of another workflow, parameter anomalies corrupt one slot of
//! one line, and a flapping event rewrites a run of `flap_length`
//! consecutive occurrences of one template into alternating states. The
//! optional holdout section adds template variants and inserted steps that
//! only appear late in the stream.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Label, LabeledRecord};
use crate::paramenc::parse_time;
use crate::parser::{is_masked, RawLog};
use crate::util::rng;

/// Anomaly subkind names used in manifests and annotations.
pub const SUBKINDS: [&str; 11] = [
    "Sequence",
    "TimeFormat",
    "TimeRange",
    "UserEmpty",
    "UserOutlier",
    "NumericInvalid",
    "NumericRange",
    "StateUnseen",
    "StateFlapping",
    "ResourcePath",
    "ResourceAssociation",
];

const UNSEEN_STATES: [&str; 5] = ["degraded", "zombie", "quarantined", "orphaned", "wedged"];

/// A state name outside `states`, fresh for every event so that an unseen
/// state injected early cannot become a known state later.
fn unseen_state(r: &mut ChaCha8Rng, states: &[String]) -> String {
    loop {
        let stem = UNSEEN_STATES.choose(r).unwrap();
        let tail: String = (0..4).map(|_| char::from(b'a' + r.gen_range(0..26u8))).collect();
        let s = format!("{stem}{tail}");
        if !states.contains(&s) {
            return s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workflow {
    pub steps: Vec<usize>,
    pub next: Vec<usize>,
}

/// A reworded template that replaces the original from `from` (a fraction
/// of the stream) onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub template: usize,
    pub text: String,
    pub from: f64,
}

/// An extra step emitted after `after_step` of `workflow` with probability
/// `rate`, from `from` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Insert {
    pub workflow: usize,
    pub after_step: usize,
    pub text: String,
    pub from: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Holdout {
    pub variants: Vec<Variant>,
    pub inserts: Vec<Insert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Manifest {
    pub name: String,
    pub lines: usize,
    pub start: String,
    /// Clock advance per line, uniform in `[lo, hi]` milliseconds.
    pub clock_step_ms: [u64; 2],
    pub users: usize,
    pub state_switch: f64,
    /// Share of lines that are anomalous, split evenly over `subkinds`.
    pub anomaly_rate: f64,
    pub subkinds: Vec<String>,
    /// Exact event counts that override the rate for the listed subkinds.
    pub anomaly_counts: BTreeMap<String, usize>,
    pub flap_length: usize,
    /// Minimum distance in lines between two injected anomalies.
    pub min_gap: usize,
    pub templates: Vec<String>,
    pub workflows: Vec<Workflow>,
    pub holdout: Holdout,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            lines: 1000,
            start: "2024-03-01T00:00:00Z".into(),
            clock_step_ms: [100, 3000],
            users: 24,
            state_switch: 0.1,
            anomaly_rate: 0.0,
            subkinds: SUBKINDS.iter().map(|s| s.to_string()).collect(),
            anomaly_counts: BTreeMap::new(),
            flap_length: 8,
            min_gap: 12,
            templates: Vec::new(),
            workflows: Vec::new(),
            holdout: Holdout::default(),
        }
    }
}

impl Manifest {
    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        serde_json::from_str(json).map_err(|e| EvalError::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Time,
    User,
    Num(i64, i64),
    State(Vec<String>),
    Path(String, usize),
}

impl Slot {
    fn kind(&self) -> &'static str {
        match self {
            Slot::Time => "time",
            Slot::User => "user",
            Slot::Num(..) => "num",
            Slot::State(_) => "state",
            Slot::Path(..) => "path",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Part {
    Literal(String),
    Slot { before: String, slot: usize, after: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Compiled {
    parts: Vec<Part>,
    slots: Vec<Slot>,
}

fn manifest_err(m: impl Into<String>) -> EvalError {
    EvalError::Manifest(m.into())
}

fn compile(text: &str) -> Result<Compiled, EvalError> {
    let mut parts = Vec::new();
    let mut slots = Vec::new();
    for (i, tok) in text.split_whitespace().enumerate() {
        let Some(open) = tok.find('{') else {
            if i < 2 && is_masked(tok) {
                return Err(manifest_err(format!("{text:?}: the two leading words must not contain digits")));
            }
            parts.push(Part::Literal(tok.to_string()));
            continue;
        };
        if i < 2 {
            return Err(manifest_err(format!("{text:?}: the two leading words must be literal")));
        }
        let close = tok[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| manifest_err(format!("{text:?}: unclosed slot")))?;
        if tok[close + 1..].contains('{') {
            return Err(manifest_err(format!("{text:?}: one slot per token")));
        }
        let spec = &tok[open + 1..close];
        let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
        let bad = || manifest_err(format!("{text:?}: bad slot {{{spec}}}"));
        let slot = match kind {
            "time" => Slot::Time,
            "user" => Slot::User,
            "num" => {
                let (lo, hi) = args.split_once(':').ok_or_else(bad)?;
                let (lo, hi) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
                if lo >= hi {
                    return Err(bad());
                }
                Slot::Num(lo, hi)
            }
            "state" => {
                let states: Vec<String> = args.split('|').map(str::to_string).collect();
                let distinct: BTreeSet<&String> = states.iter().collect();
                if states.len() < 2 || distinct.len() != states.len() || states.iter().any(|s| s.is_empty() || is_masked(s)) {
                    return Err(bad());
                }
                Slot::State(states)
            }
            "path" => {
                let (prefix, n) = args.rsplit_once(':').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                if !prefix.starts_with('/') || !prefix.ends_with('/') || prefix.contains("//") || n == 0 {
                    return Err(bad());
                }
                Slot::Path(prefix.to_string(), n)
            }
            _ => return Err(bad()),
        };
        parts.push(Part::Slot { before: tok[..open].to_string(), slot: slots.len(), after: tok[close + 1..].to_string() });
        slots.push(slot);
    }
    if parts.len() < 3 {
        return Err(manifest_err(format!("{text:?}: needs at least three words")));
    }
    Ok(Compiled { parts, slots })
}

impl Compiled {
    fn render(&self, values: &[String]) -> String {
        let words: Vec<String> = self
            .parts
            .iter()
            .map(|p| match p {
                Part::Literal(l) => l.clone(),
                Part::Slot { before, slot, after } => format!("{before}{}{after}", values[*slot]),
            })
            .collect();
        words.join(" ")
    }

    fn same_slots(&self, other: &Compiled) -> bool {
        self.slots.len() == other.slots.len() && self.slots.iter().zip(&other.slots).all(|(a, b)| a.kind() == b.kind())
    }
}

/// Days since 1970-01-01 to a civil date.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}

#[derive(Debug, Clone, Copy)]
struct Clock {
    y: i64,
    mo: u32,
    d: u32,
    h: i64,
    mi: i64,
    s: i64,
    ms: i64,
}

fn clock(ms: i64) -> Clock {
    let (y, mo, d) = civil_from_days(ms.div_euclid(86_400_000));
    let rem = ms.rem_euclid(86_400_000);
    Clock { y, mo, d, h: rem / 3_600_000, mi: rem / 60_000 % 60, s: rem / 1000 % 60, ms: rem % 1000 }
}

fn iso(ms: i64) -> String {
    let c = clock(ms);
    format!("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", c.y, c.mo, c.d, c.h, c.mi, c.s, c.ms)
}

const USER_POOL_SEED: u64 = 0x7573_6572_706f_6f6c;

fn user_id(r: &mut ChaCha8Rng) -> String {
    loop {
        let id = format!("u{:06x}", r.gen_range(0..0x100_0000u32));
        if is_masked(&id) {
            return id;
        }
    }
}

#[derive(Debug, Clone)]
struct Line {
    /// Index into the compiled template list (originals, variants, inserts).
    template: usize,
    /// Original template index, for shared slot state.
    origin: usize,
    values: Vec<String>,
    clock_ms: i64,
    subkind: Option<&'static str>,
}

/// A generated corpus; `records` carry labels and subkinds.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub name: String,
    pub lines: Vec<String>,
    pub records: Vec<LabeledRecord>,
}

impl SyntheticCorpus {
    pub fn anomalous(&self) -> usize {
        self.records.iter().filter(|r| r.label == Label::Anomalous).count()
    }

    /// Lines per subkind annotation.
    pub fn subkind_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Some(s) = &r.subkind {
                *out.entry(s.clone()).or_insert(0) += 1;
            }
        }
        out
    }

    /// `logs.txt` plus `truth.csv` (`line,label,subkind`).
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        let mut logs = self.lines.join("\n");
        logs.push('\n');
        std::fs::write(dir.join(super::LOGS_FILE), logs)?;
        let mut truth = String::from("line,label,subkind\n");
        for r in &self.records {
            let label = match r.label {
                Label::Normal => "Normal",
                Label::Anomalous => "Anomaly",
            };
            truth.push_str(&format!("{},{label},{}\n", r.raw.line_no, r.subkind.as_deref().unwrap_or("")));
        }
        std::fs::write(dir.join(TRUTH_FILE), truth)?;
        Ok(())
    }
}

pub const TRUTH_FILE: &str = "truth.csv";

struct Generator<'a> {
    m: &'a Manifest,
    compiled: Vec<Compiled>,
    variant_of: BTreeMap<usize, (usize, usize)>,
    users: Vec<String>,
    sticky: BTreeMap<(usize, usize), usize>,
    r: ChaCha8Rng,
}

impl Generator<'_> {
    fn values(&mut self, origin: usize, template: usize, clock_ms: i64) -> Vec<String> {
        let slots = self.compiled[template].slots.clone();
        let mut out = Vec::with_capacity(slots.len());
        for (i, slot) in slots.iter().enumerate() {
            out.push(match slot {
                Slot::Time => iso(clock_ms),
                Slot::User => self.users.choose(&mut self.r).unwrap().clone(),
                Slot::Num(lo, hi) => self.r.gen_range(*lo..=*hi).to_string(),
                Slot::State(states) => {
                    let n = states.len();
                    let cur = match self.sticky.get(&(origin, i)) {
                        None => self.r.gen_range(0..n),
                        Some(&c) if self.r.gen_bool(self.m.state_switch) => (c + self.r.gen_range(1..n)) % n,
                        Some(&c) => c,
                    };
                    self.sticky.insert((origin, i), cur);
                    states[cur].clone()
                }
                Slot::Path(prefix, n) => format!("{prefix}seg-{:04}.dat", self.r.gen_range(0..*n)),
            });
        }
        out
    }
}

fn event_counts(m: &Manifest) -> Result<BTreeMap<&'static str, usize>, EvalError> {
    for k in m.subkinds.iter().chain(m.anomaly_counts.keys()) {
        if !SUBKINDS.contains(&k.as_str()) {
            return Err(manifest_err(format!("unknown subkind {k:?}")));
        }
    }
    let rated: Vec<&'static str> = SUBKINDS
        .iter()
        .copied()
        .filter(|k| m.subkinds.iter().any(|s| s == k) && !m.anomaly_counts.contains_key(*k))
        .collect();
    let budget = (m.anomaly_rate * m.lines as f64).round() as usize;
    let mut out = BTreeMap::new();
    for (i, k) in rated.iter().enumerate() {
        let share = budget / rated.len() + usize::from(i < budget % rated.len());
        let events = if *k == "StateFlapping" { share.div_ceil(m.flap_length) } else { share };
        out.insert(*k, events);
    }
    for (k, &n) in &m.anomaly_counts {
        let k = SUBKINDS.iter().copied().find(|s| s == k).unwrap();
        out.insert(k, n);
    }
    Ok(out)
}

fn validate(m: &Manifest) -> Result<(), EvalError> {
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if m.lines == 0 || m.templates.is_empty() || m.workflows.is_empty() {
        return Err(manifest_err("need lines, templates and workflows"));
    }
    if !in_unit(m.anomaly_rate) || !in_unit(m.state_switch) {
        return Err(manifest_err("rates must lie in [0, 1]"));
    }
    if m.clock_step_ms[0] == 0 || m.clock_step_ms[0] > m.clock_step_ms[1] {
        return Err(manifest_err("clock_step_ms must be an increasing positive range"));
    }
    if m.users < 2 || m.flap_length < 2 || !m.flap_length.is_multiple_of(2) {
        return Err(manifest_err("need at least two users and an even flap_length of at least 2"));
    }
    for (i, w) in m.workflows.iter().enumerate() {
        if w.steps.is_empty() || w.next.is_empty() {
            return Err(manifest_err(format!("workflow {i}: empty steps or next")));
        }
        if w.steps.iter().any(|&s| s >= m.templates.len()) || w.next.iter().any(|&n| n >= m.workflows.len()) {
            return Err(manifest_err(format!("workflow {i}: index out of range")));
        }
    }
    for v in &m.holdout.variants {
        if v.template >= m.templates.len() || !in_unit(v.from) {
            return Err(manifest_err("variant: bad template index or start"));
        }
    }
    for ins in &m.holdout.inserts {
        let ok = m.workflows.get(ins.workflow).is_some_and(|w| ins.after_step < w.steps.len());
        if !ok || !in_unit(ins.from) || !in_unit(ins.rate) {
            return Err(manifest_err("insert: bad workflow, step, start or rate"));
        }
    }
    parse_time(&m.start).ok().and_then(|t| t.instant_ms()).ok_or_else(|| manifest_err("start is not a date-time"))?;
    Ok(())
}

/// Deterministic labeled corpus for `manifest` and `seed`.
pub fn generate_synthetic(m: &Manifest, seed: u64) -> Result<SyntheticCorpus, EvalError> {
    validate(m)?;
    let counts = event_counts(m)?;
    let mut compiled: Vec<Compiled> = m.templates.iter().map(|t| compile(t)).collect::<Result<_, _>>()?;
    let base = compiled.len();
    let mut variant_of = BTreeMap::new();
    for v in &m.holdout.variants {
        let c = compile(&v.text)?;
        if !c.same_slots(&compiled[v.template]) {
            return Err(manifest_err(format!("variant {:?} must keep the slot kinds of its template", v.text)));
        }
        variant_of.insert(v.template, (compiled.len(), (v.from * m.lines as f64) as usize));
        compiled.push(c);
    }
    let insert_ids: Vec<usize> = m
        .holdout
        .inserts
        .iter()
        .map(|ins| {
            compiled.push(compile(&ins.text)?);
            Ok(compiled.len() - 1)
        })
        .collect::<Result<_, EvalError>>()?;

    // The user population depends on the manifest only, so corpora drawn
    // with different seeds describe the same system.
    let mut pool = rng(USER_POOL_SEED ^ m.users as u64);
    let mut users = BTreeSet::new();
    while users.len() < m.users {
        users.insert(user_id(&mut pool));
    }
    let r = rng(seed);
    let mut g = Generator { m, compiled, variant_of, users: users.into_iter().collect(), sticky: BTreeMap::new(), r };

    let n = m.lines;
    let gap = m.min_gap;
    let jumps = counts.get("Sequence").copied().unwrap_or(0);
    if jumps > 0 && n <= 2 * gap + jumps * gap {
        return Err(manifest_err("too many sequence anomalies for the stream length"));
    }
    let mut jump_at = BTreeSet::new();
    let mut tries = 0;
    while jump_at.len() < jumps {
        tries += 1;
        if tries > 100_000 {
            return Err(manifest_err("cannot place sequence anomalies"));
        }
        let i = g.r.gen_range(gap..n - gap);
        if jump_at.range(i.saturating_sub(2 * gap)..i + 2 * gap).next().is_none() {
            jump_at.insert(i);
        }
    }

    let start_ms = parse_time(&m.start).ok().and_then(|t| t.instant_ms()).unwrap();
    let mut clock_ms = start_ms;
    let mut lines: Vec<Line> = Vec::with_capacity(n);
    let mut wf = g.r.gen_range(0..m.workflows.len());
    let mut step = 0;
    let mut pending_jump = false;
    let mut checked = 0;
    while lines.len() < n {
        let i = lines.len();
        pending_jump |= jump_at.range(checked..=i).next().is_some();
        checked = i + 1;
        let steps = &m.workflows[wf].steps;
        let mut subkind = None;
        if pending_jump && step > 0 && step < steps.len() {
            let expected = steps[step];
            let targets: Vec<(usize, usize)> = (0..m.workflows.len())
                .filter(|&b| b != wf)
                .flat_map(|b| (1..m.workflows[b].steps.len()).map(move |k| (b, k)))
                .filter(|&(b, k)| m.workflows[b].steps[k] != expected)
                .collect();
            if let Some(&(b, k)) = targets.choose(&mut g.r) {
                wf = b;
                step = k;
                subkind = Some("Sequence");
                pending_jump = false;
            }
        }
        let origin = m.workflows[wf].steps[step];
        let template = match g.variant_of.get(&origin) {
            Some(&(v, from)) if i >= from => v,
            _ => origin,
        };
        clock_ms += g.r.gen_range(m.clock_step_ms[0]..=m.clock_step_ms[1]) as i64;
        let values = g.values(origin, template, clock_ms);
        lines.push(Line { template, origin, values, clock_ms, subkind });

        for (ins, &tid) in m.holdout.inserts.iter().zip(&insert_ids) {
            let after = ins.workflow == wf && ins.after_step == step;
            if after && lines.len() < n && lines.len() as f64 >= ins.from * n as f64 && g.r.gen_bool(ins.rate) {
                clock_ms += g.r.gen_range(m.clock_step_ms[0]..=m.clock_step_ms[1]) as i64;
                let values = g.values(tid, tid, clock_ms);
                lines.push(Line { template: tid, origin: tid, values, clock_ms, subkind: None });
            }
        }
        step += 1;
        if step == m.workflows[wf].steps.len() {
            wf = *m.workflows[wf].next.choose(&mut g.r).unwrap();
            step = 0;
        }
    }
    let placed = lines.iter().filter(|l| l.subkind.is_some()).count();
    if placed != jumps {
        return Err(manifest_err("cannot place sequence anomalies"));
    }

    for (&kind, &events) in &counts {
        if kind == "Sequence" {
            continue;
        }
        for _ in 0..events {
            inject(&mut g, &mut lines, kind, base)?;
        }
    }

    let mut out_lines = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (i, l) in lines.iter().enumerate() {
        let text = format!("{} {}", iso(l.clock_ms), g.compiled[l.template].render(&l.values));
        let raw = RawLog::from_line(i as u64 + 1, &text).map_err(|e| manifest_err(e.to_string()))?;
        records.push(LabeledRecord {
            raw,
            label: if l.subkind.is_some() { Label::Anomalous } else { Label::Normal },
            group_key: None,
            subkind: l.subkind.map(str::to_string),
        });
        out_lines.push(text);
    }
    Ok(SyntheticCorpus { name: m.name.clone(), lines: out_lines, records })
}

fn is_clear(lines: &[Line], i: usize, gap: usize) -> bool {
    let lo = i.saturating_sub(gap);
    let hi = (i + gap + 1).min(lines.len());
    lines[lo..hi].iter().all(|l| l.subkind.is_none())
}

fn slot_kind(kind: &str) -> &'static str {
    match kind {
        "TimeFormat" | "TimeRange" => "time",
        "UserEmpty" | "UserOutlier" => "user",
        "NumericInvalid" | "NumericRange" => "num",
        "StateUnseen" | "StateFlapping" => "state",
        _ => "path",
    }
}

/// Corrupt one slot of one line (or a run of lines for flapping). Only
/// templates from the base list are targeted.
fn inject(g: &mut Generator, lines: &mut [Line], kind: &'static str, base: usize) -> Result<(), EvalError> {
    let want = slot_kind(kind);
    let gap = g.m.min_gap;
    for _ in 0..100_000 {
        let i = g.r.gen_range(gap..lines.len().saturating_sub(gap).max(gap + 1));
        if i >= lines.len() || lines[i].template >= base || !is_clear(lines, i, gap) {
            continue;
        }
        let t = lines[i].template;
        let candidates: Vec<usize> = g.compiled[t]
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind() == want)
            .map(|(k, _)| k)
            .collect();
        let Some(&k) = candidates.choose(&mut g.r) else {
            continue;
        };
        let slot = g.compiled[t].slots[k].clone();
        if kind == "StateFlapping" {
            if flap(g, lines, i, k, &slot) {
                return Ok(());
            }
            continue;
        }
        let c = clock(lines[i].clock_ms);
        let value = match (kind, &slot) {
            ("TimeFormat", _) => format!("{:04}/{:02}/{:02}-{:02}h{:02}m{:02}", c.y, c.mo, c.d, c.h, c.mi, c.s),
            ("TimeRange", _) => format!(
                "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z",
                c.y,
                g.r.gen_range(13..20),
                c.d,
                c.h,
                c.mi,
                c.s,
                c.ms
            ),
            ("UserEmpty", _) => String::new(),
            ("UserOutlier", _) => loop {
                let u = user_id(&mut g.r);
                if !g.users.contains(&u) {
                    break u;
                }
            },
            ("NumericInvalid", _) => format!("{}O{}", g.r.gen_range(1..10), g.r.gen_range(0..10)),
            ("NumericRange", Slot::Num(lo, hi)) => (hi + (hi - lo) * g.r.gen_range(5..10)).to_string(),
            ("StateUnseen", Slot::State(states)) => unseen_state(&mut g.r, states),
            ("ResourcePath", Slot::Path(prefix, _)) => {
                let cut = prefix[1..].find('/').map_or(1, |p| p + 2);
                format!("{}/{}seg-{:04}.dat", &prefix[..cut], &prefix[cut..], g.r.gen_range(0..100))
            }
            ("ResourceAssociation", _) => {
                format!("/mnt/x{:04x}/q{:04x}.zz", g.r.gen_range(0..0x10000u32), g.r.gen_range(0..0x10000u32))
            }
            _ => unreachable!("slot kind checked above"),
        };
        lines[i].values[k] = value;
        lines[i].subkind = Some(kind);
        return Ok(());
    }
    Err(manifest_err(format!("cannot place a {kind} anomaly")))
}

/// Rewrite `flap_length` consecutive occurrences of a template into
/// alternating states, ending on the state the stream resumes with.
fn flap(g: &mut Generator, lines: &mut [Line], i: usize, k: usize, slot: &Slot) -> bool {
    let Slot::State(states) = slot else { return false };
    let origin = lines[i].origin;
    let t = lines[i].template;
    let run: Vec<usize> = (i..lines.len()).filter(|&j| lines[j].origin == origin).take(g.m.flap_length + 1).collect();
    if run.len() <= g.m.flap_length || !run[..g.m.flap_length].iter().all(|&j| lines[j].subkind.is_none() && lines[j].template == t) {
        return false;
    }
    let resume = lines[run[g.m.flap_length]].values[k].clone();
    let others: Vec<&String> = states.iter().filter(|s| **s != resume).collect();
    let other = (*others.choose(&mut g.r).unwrap()).clone();
    for (n, &j) in run[..g.m.flap_length].iter().enumerate() {
        let even_from_end = (g.m.flap_length - 1 - n).is_multiple_of(2);
        lines[j].values[k] = if even_from_end { resume.clone() } else { other.clone() };
        lines[j].subkind = Some("StateFlapping");
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Manifest {
        Manifest {
            lines: 600,
            templates: vec![
                "job start id={user} at {time}".into(),
                "job step bytes={num:10:20} state={state:ok|slow}".into(),
                "job done path={path:/srv/jobs/:5}".into(),
                "cron tick at {time}".into(),
                "cron sweep removed {num:0:9} files".into(),
            ],
            workflows: vec![
                Workflow { steps: vec![0, 1, 2], next: vec![0, 1] },
                Workflow { steps: vec![3, 4], next: vec![0] },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn civil_dates() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_783), (2024, 3, 1));
        assert_eq!(iso(86_400_000 + 3_723_004), "1970-01-02T01:02:03.004Z");
    }

    #[test]
    fn zero_rate_is_all_normal() {
        let c = generate_synthetic(&manifest(), 1).unwrap();
        assert_eq!(c.records.len(), 600);
        assert_eq!(c.anomalous(), 0);
    }

    #[test]
    fn exact_counts_are_honored() {
        let mut m = manifest();
        m.anomaly_counts.insert("Sequence".into(), 5);
        let c = generate_synthetic(&m, 3).unwrap();
        assert_eq!(c.subkind_counts(), BTreeMap::from([("Sequence".to_string(), 5)]));
        m.anomaly_counts.insert("StateFlapping".into(), 1);
        m.anomaly_counts.insert("UserEmpty".into(), 2);
        let c = generate_synthetic(&m, 3).unwrap();
        let counts = c.subkind_counts();
        assert_eq!(counts["StateFlapping"], m.flap_length);
        assert_eq!(counts["UserEmpty"], 2);
        assert_eq!(c.anomalous(), 5 + m.flap_length + 2);
    }

    #[test]
    fn same_seed_same_corpus() {
        let mut m = manifest();
        m.anomaly_rate = 0.05;
        assert_eq!(generate_synthetic(&m, 9).unwrap(), generate_synthetic(&m, 9).unwrap());
        assert_ne!(generate_synthetic(&m, 9).unwrap().lines, generate_synthetic(&m, 10).unwrap().lines);
    }

    #[test]
    fn bad_manifests() {
        let mut m = manifest();
        m.templates[0] = "job {user} starts".into();
        assert!(matches!(generate_synthetic(&m, 1), Err(EvalError::Manifest(_))));
        let mut m = manifest();
        m.workflows[0].next = vec![7];
        assert!(generate_synthetic(&m, 1).is_err());
        let mut m = manifest();
        m.anomaly_counts.insert("Bogus".into(), 1);
        assert!(generate_synthetic(&m, 1).is_err());
        assert!(Manifest::from_json(r#"{"lines": 5, "extra": 1}"#).is_err());
    }
}
