//! Forward pass and backpropagation for the attention BiLSTM.

use super::{ModelWeights, SeqError};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `out += M x` for a row-major `rows × x.len()` matrix.
fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ y`.
fn matvec_t_add(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if *yi != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, a)| *o += yi * a);
        }
    }
}

/// `g += y xᵀ`.
fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if *yi != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, b)| *a += yi * b);
        }
    }
}

/// One direction's activations in processing order.
struct DirCache {
    /// Post-activation gates `[i, f, g, o]`, `4h` per step.
    gates: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

/// Everything the backward pass needs, plus the outputs.
pub struct Forward {
    dirs: [DirCache; 2],
    /// Concatenated hidden states `[h_fwd_t, h_bwd_t]` per window position.
    states: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    pub attention: Vec<f64>,
    pub context: Vec<f64>,
    pub probs: Vec<f64>,
}

fn run_dir(w: &ModelWeights, dir: usize, xs: &[&Vec<f64>]) -> DirCache {
    let h = w.dims.hidden;
    let d = w.dims.input;
    let l = w.dims.layout();
    let wm = &w.data[l.w[dir]..l.w[dir] + 4 * h * d];
    let um = &w.data[l.u[dir]..l.u[dir] + 4 * h * h];
    let b = &w.data[l.b[dir]..l.b[dir] + 4 * h];
    let mut cache = DirCache { gates: Vec::new(), c: Vec::new(), h: Vec::new() };
    let mut hp = vec![0.0; h];
    let mut cp = vec![0.0; h];
    for x in xs {
        let mut z = b.to_vec();
        matvec_add(wm, x, &mut z);
        matvec_add(um, &hp, &mut z);
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = if (2 * h..3 * h).contains(&k) { zk.tanh() } else { sigmoid(*zk) };
        }
        let c: Vec<f64> = (0..h).map(|j| z[h + j] * cp[j] + z[j] * z[2 * h + j]).collect();
        let hn: Vec<f64> = (0..h).map(|j| z[3 * h + j] * c[j].tanh()).collect();
        cache.gates.push(z);
        cache.c.push(c.clone());
        cache.h.push(hn.clone());
        hp = hn;
        cp = c;
    }
    cache
}

pub fn forward_full(inputs: &[Vec<f64>], w: &ModelWeights) -> Result<Forward, SeqError> {
    let dims = w.dims;
    if inputs.is_empty() {
        return Err(SeqError::ShapeMismatch("empty window".into()));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != dims.input) {
        return Err(SeqError::ShapeMismatch(format!("step of width {}, expected {}", x.len(), dims.input)));
    }
    if w.data.len() != dims.layout().total {
        return Err(SeqError::ShapeMismatch("weight vector length".into()));
    }
    let t_len = inputs.len();
    let h = dims.hidden;
    let l = dims.layout();
    let fwd_x: Vec<&Vec<f64>> = inputs.iter().collect();
    let bwd_x: Vec<&Vec<f64>> = inputs.iter().rev().collect();
    let dirs = [run_dir(w, 0, &fwd_x), run_dir(w, 1, &bwd_x)];
    let states: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let mut s = dirs[0].h[t].clone();
            s.extend_from_slice(&dirs[1].h[t_len - 1 - t]);
            s
        })
        .collect();
    let a = dims.attn;
    let wa = &w.data[l.wa..l.wa + a * 2 * h];
    let ba = &w.data[l.ba..l.ba + a];
    let v = &w.data[l.v..l.v + a];
    let u: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            let mut z = ba.to_vec();
            matvec_add(wa, s, &mut z);
            z.iter_mut().for_each(|x| *x = x.tanh());
            z
        })
        .collect();
    let scores: Vec<f64> = u.iter().map(|ut| ut.iter().zip(v).map(|(x, y)| x * y).sum()).collect();
    let attention = softmax(&scores);
    let mut context = vec![0.0; 2 * h];
    for (alpha, s) in attention.iter().zip(&states) {
        context.iter_mut().zip(s).for_each(|(c, x)| *c += alpha * x);
    }
    let c = dims.classes;
    let mut logits = w.data[l.bo..l.bo + c].to_vec();
    matvec_add(&w.data[l.wo..l.wo + c * 2 * h], &context, &mut logits);
    let probs = softmax(&logits);
    Ok(Forward { dirs, states, u, attention, context, probs })
}

pub(crate) fn loss(inputs: &[Vec<f64>], target: usize, w: &ModelWeights) -> Result<f64, SeqError> {
    let f = forward_full(inputs, w)?;
    Ok(-f.probs[target].max(f64::MIN_POSITIVE).ln())
}

#[allow(clippy::too_many_arguments)]
fn back_dir(
    w: &ModelWeights,
    dir: usize,
    xs: &[&Vec<f64>],
    cache: &DirCache,
    dh_in: &[Vec<f64>],
    grad: &mut [f64],
) {
    let h = w.dims.hidden;
    let d = w.dims.input;
    let l = w.dims.layout();
    let um = &w.data[l.u[dir]..l.u[dir] + 4 * h * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..xs.len()).rev() {
        let g = &cache.gates[t];
        let c = &cache.c[t];
        let c_prev = if t > 0 { &cache.c[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &cache.h[t - 1] } else { &zeros };
        for j in 0..h {
            let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = c[j].tanh();
            let dh = dh_in[t][j] + dh_next[j];
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            dz[j] = dc * gg * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - gg * gg);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        outer_add(&mut grad[l.w[dir]..l.w[dir] + 4 * h * d], &dz, xs[t]);
        outer_add(&mut grad[l.u[dir]..l.u[dir] + 4 * h * h], &dz, h_prev);
        grad[l.b[dir]..l.b[dir] + 4 * h].iter_mut().zip(&dz).for_each(|(g, x)| *g += x);
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        matvec_t_add(um, &dz, &mut dh_next);
    }
}

/// Add the gradient of the window's cross-entropy to `grad`; returns the loss.
#[allow(clippy::needless_range_loop)]
pub(crate) fn accumulate_grad(
    inputs: &[Vec<f64>],
    target: usize,
    w: &ModelWeights,
    grad: &mut [f64],
) -> Result<f64, SeqError> {
    let f = forward_full(inputs, w)?;
    let dims = w.dims;
    let (h, a, c) = (dims.hidden, dims.attn, dims.classes);
    let l = dims.layout();
    let t_len = inputs.len();

    let mut dlogits = f.probs.clone();
    dlogits[target] -= 1.0;
    outer_add(&mut grad[l.wo..l.wo + c * 2 * h], &dlogits, &f.context);
    grad[l.bo..l.bo + c].iter_mut().zip(&dlogits).for_each(|(g, x)| *g += x);
    let mut dctx = vec![0.0; 2 * h];
    matvec_t_add(&w.data[l.wo..l.wo + c * 2 * h], &dlogits, &mut dctx);

    let dalpha: Vec<f64> = f.states.iter().map(|s| s.iter().zip(&dctx).map(|(x, y)| x * y).sum()).collect();
    let mean: f64 = f.attention.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
    let v = &w.data[l.v..l.v + a];
    let wa = &w.data[l.wa..l.wa + a * 2 * h];
    let mut dstates: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut dv = vec![0.0; a];
    for t in 0..t_len {
        let mut ds: Vec<f64> = dctx.iter().map(|x| x * f.attention[t]).collect();
        let de = f.attention[t] * (dalpha[t] - mean);
        dv.iter_mut().zip(&f.u[t]).for_each(|(g, x)| *g += de * x);
        let dpre: Vec<f64> = f.u[t].iter().zip(v).map(|(ut, vk)| de * vk * (1.0 - ut * ut)).collect();
        outer_add(&mut grad[l.wa..l.wa + a * 2 * h], &dpre, &f.states[t]);
        grad[l.ba..l.ba + a].iter_mut().zip(&dpre).for_each(|(g, x)| *g += x);
        matvec_t_add(wa, &dpre, &mut ds);
        dstates.push(ds);
    }
    grad[l.v..l.v + a].iter_mut().zip(&dv).for_each(|(g, x)| *g += x);

    let dh_fwd: Vec<Vec<f64>> = dstates.iter().map(|s| s[..h].to_vec()).collect();
    let dh_bwd: Vec<Vec<f64>> = dstates.iter().rev().map(|s| s[h..].to_vec()).collect();
    let fwd_x: Vec<&Vec<f64>> = inputs.iter().collect();
    let bwd_x: Vec<&Vec<f64>> = inputs.iter().rev().collect();
    back_dir(w, 0, &fwd_x, &f.dirs[0], &dh_fwd, grad);
    back_dir(w, 1, &bwd_x, &f.dirs[1], &dh_bwd, grad);
    Ok(-f.probs[target].max(f64::MIN_POSITIVE).ln())
}

/// Loss and full gradient for one window.
pub fn loss_and_grad(inputs: &[Vec<f64>], target: usize, w: &ModelWeights) -> Result<(f64, Vec<f64>), SeqError> {
    if target >= w.dims.classes {
        return Err(SeqError::TargetOutOfRange { target, classes: w.dims.classes });
    }
    let mut grad = vec![0.0; w.data.len()];
    let l = accumulate_grad(inputs, target, w, &mut grad)?;
    Ok((l, grad))
}
