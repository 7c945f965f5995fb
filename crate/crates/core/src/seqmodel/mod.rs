//! Next-template prediction with a bidirectional LSTM and additive
//! attention, trained with hand-derived gradients.
//!
//! Each window step is a merged template and parameter vector. Both LSTM
//! directions read the window; the concatenated hidden states are pooled
//! by attention against a learned query, projected to class logits and
//! normalized with softmax.

mod net;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::rng;

pub use net::{forward_full, loss_and_grad, Forward};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeqError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no training windows")]
    NoWindows,
    #[error("target {target} outside {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("bad weights blob: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqModelConfig {
    pub hidden_units: usize,
    pub window_w: usize,
    pub candidate_g: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    /// Cap on windows used per epoch, 0 for all. A fixed seeded subsample.
    pub max_windows: usize,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            window_w: 20,
            candidate_g: 9,
            lr: 1e-3,
            epochs: 10,
            batch: 16,
            clip_norm: 5.0,
            max_windows: 0,
        }
    }
}

/// Sizes of every tensor in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub attn: usize,
    pub classes: usize,
}

/// Offsets of each tensor in the flat parameter vector. Matrices are
/// row-major; LSTM gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub w: [usize; 2],
    pub u: [usize; 2],
    pub b: [usize; 2],
    pub wa: usize,
    pub ba: usize,
    pub v: usize,
    pub wo: usize,
    pub bo: usize,
    pub total: usize,
}

impl Dims {
    pub(crate) fn layout(&self) -> Layout {
        let (d, h, a, c) = (self.input, self.hidden, self.attn, self.classes);
        let dir = 4 * h * d + 4 * h * h + 4 * h;
        let w = [0, dir];
        let u = [4 * h * d, dir + 4 * h * d];
        let b = [u[0] + 4 * h * h, u[1] + 4 * h * h];
        let wa = 2 * dir;
        let ba = wa + a * 2 * h;
        let v = ba + a;
        let wo = v + a;
        let bo = wo + c * 2 * h;
        Layout { w, u, b, wa, ba, v, wo, bo, total: bo + c }
    }

    /// Named tensors as (name, offset, len, fan_in, fan_out).
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, usize, usize)> {
        let l = self.layout();
        let (d, h, a, c) = (self.input, self.hidden, self.attn, self.classes);
        vec![
            ("fwd.w", l.w[0], 4 * h * d, d, 4 * h),
            ("fwd.u", l.u[0], 4 * h * h, h, 4 * h),
            ("fwd.b", l.b[0], 4 * h, 0, 0),
            ("bwd.w", l.w[1], 4 * h * d, d, 4 * h),
            ("bwd.u", l.u[1], 4 * h * h, h, 4 * h),
            ("bwd.b", l.b[1], 4 * h, 0, 0),
            ("attn.w", l.wa, a * 2 * h, 2 * h, a),
            ("attn.b", l.ba, a, 0, 0),
            ("attn.v", l.v, a, a, 1),
            ("out.w", l.wo, c * 2 * h, 2 * h, c),
            ("out.b", l.bo, c, 0, 0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub dims: Dims,
    pub data: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"TPLWGT01";
/// Upper bound on any stored dimension, so a corrupt header cannot
/// overflow the layout arithmetic.
const MAX_DIM: usize = 1 << 20;

impl ModelWeights {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.layout().total] }
    }

    /// Xavier-uniform matrices, zero biases.
    pub fn init(dims: Dims, seed: u64) -> Self {
        use rand::Rng;
        let mut w = Self::zeros(dims);
        let mut r = rng(seed);
        for (_, off, len, fan_in, fan_out) in dims.tensors() {
            if fan_in == 0 {
                continue;
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut w.data[off..off + len] {
                *x = r.gen_range(-limit..limit);
            }
        }
        w
    }

    /// Little-endian blob: magic, four u64 dims, u64 count, f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        for d in [self.dims.input, self.dims.hidden, self.dims.attn, self.dims.classes] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SeqError> {
        let bad = |m: &str| SeqError::Format(m.to_string());
        if bytes.len() < 48 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let dims = Dims { input: word(0), hidden: word(1), attn: word(2), classes: word(3) };
        if [dims.input, dims.hidden, dims.attn, dims.classes].iter().any(|&d| d == 0 || d > MAX_DIM) {
            return Err(bad("dimension out of range"));
        }
        let n = word(4);
        if n != dims.layout().total || bytes.len() != 48 + 8 * n {
            return Err(bad("length does not match the shape header"));
        }
        let data: Vec<f64> = bytes[48..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite weight"));
        }
        Ok(Self { dims, data })
    }
}

/// `w` consecutive step vectors and the id of the entry that follows them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingWindow<'a> {
    pub inputs: &'a [Vec<f64>],
    pub target: usize,
}

/// Class probabilities for one window.
pub fn forward(inputs: &[Vec<f64>], w: &ModelWeights) -> Result<Vec<f64>, SeqError> {
    Ok(forward_full(inputs, w)?.probs)
}

/// Ids of the `g` most probable classes, most probable first; ties go to
/// the smaller id.
pub fn top_g(probs: &[f64], g: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids.truncate(g);
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub weights: ModelWeights,
    /// Mean training loss per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Cross-entropy training with Adam from a seeded Xavier start.
pub fn train(windows: &[TrainingWindow], dims: Dims, cfg: &SeqModelConfig, seed: u64) -> Result<TrainReport, SeqError> {
    train_from(windows, ModelWeights::init(dims, seed), cfg, seed)
}

pub fn train_from(
    windows: &[TrainingWindow],
    mut weights: ModelWeights,
    cfg: &SeqModelConfig,
    seed: u64,
) -> Result<TrainReport, SeqError> {
    if windows.is_empty() {
        return Err(SeqError::NoWindows);
    }
    let classes = weights.dims.classes;
    if let Some(w) = windows.iter().find(|w| w.target >= classes) {
        return Err(SeqError::TargetOutOfRange { target: w.target, classes });
    }
    let n = weights.data.len();
    let mut adam = Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 };
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut r = rng(seed ^ 0x5eed);
    let mut grad = vec![0.0; n];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let take = if cfg.max_windows == 0 { order.len() } else { cfg.max_windows.min(order.len()) };
        let mut total = 0.0;
        for batch in order[..take].chunks(cfg.batch.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                total += net::accumulate_grad(windows[i].inputs, windows[i].target, &weights, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let norm = crate::util::norm(&grad);
            if norm > cfg.clip_norm {
                let s = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut weights.data, &grad, cfg.lr);
        }
        let mean = total / take as f64;
        if !mean.is_finite() || weights.data.iter().any(|x| !x.is_finite()) {
            return Err(SeqError::DivergedLoss { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport { weights, epoch_losses })
}

/// Mean cross-entropy over `windows`.
pub fn mean_loss(windows: &[TrainingWindow], w: &ModelWeights) -> Result<f64, SeqError> {
    let mut total = 0.0;
    for win in windows {
        let p = forward(win.inputs, w)?;
        total -= p[win.target].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / windows.len().max(1) as f64)
}

/// Largest relative difference between the analytic gradient and central
/// finite differences over every weight.
#[allow(clippy::needless_range_loop)]
pub fn grad_check(weights: &ModelWeights, window: &TrainingWindow, eps: f64) -> Result<f64, SeqError> {
    let (_, analytic) = loss_and_grad(window.inputs, window.target, weights)?;
    let mut probe = weights.clone();
    let mut worst = 0.0f64;
    for i in 0..weights.data.len() {
        let x = weights.data[i];
        probe.data[i] = x + eps;
        let up = net::loss(window.inputs, window.target, &probe)?;
        probe.data[i] = x - eps;
        let down = net::loss(window.inputs, window.target, &probe)?;
        probe.data[i] = x;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding do not count as mismatches.
pub const GRAD_FLOOR: f64 = 1e-6;
