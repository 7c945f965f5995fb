//! Key parameter selection by k-means over per-position features, with k
//! picked by silhouette.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamError, ParamType};
use crate::util::rng;

/// Summary of one (template, position) over the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFeatures {
    pub template_id: usize,
    pub position: usize,
    pub ptype: ParamType,
    /// Spread of the encodings, scaled to [0, 1] per type.
    pub variance: f64,
    pub distinct_ratio: f64,
    pub presence_rate: f64,
    pub samples: usize,
}

impl PositionFeatures {
    pub fn point(&self) -> Vec<f64> {
        vec![self.variance, self.ptype.code() / 5.0, self.distinct_ratio, self.presence_rate]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeySelectionConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub coverage_q: f64,
    pub min_samples: usize,
}

impl Default for KeySelectionConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 5,
            coverage_q: 0.9,
            min_samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeySelection {
    pub keys: BTreeSet<(usize, usize)>,
    /// Chosen number of clusters, when clustering ran.
    pub k: Option<usize>,
    pub fallback: Option<ParamError>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm from a k-means++ start. Returns one cluster index per
/// point; fewer than `k` clusters are used when points coincide.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[r.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = r.gen::<f64>() * total;
        let mut pick = d.len() - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        centers.push(points[pick].clone());
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            for c in 1..centers.len() {
                if dist2(p, &centers[c]) < dist2(p, &centers[best]) {
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..dim {
                center[j] = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

/// Mean silhouette width; `None` with fewer than two non-empty clusters.
pub fn silhouette(points: &[Vec<f64>], assign: &[usize]) -> Option<f64> {
    let labels: BTreeSet<usize> = assign.iter().copied().collect();
    if labels.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |c: usize| {
            let (sum, n) = points
                .iter()
                .zip(assign)
                .enumerate()
                .filter(|(j, (_, a))| **a == c && *j != i)
                .fold((0.0, 0usize), |(s, n), (_, (q, _))| (s + dist2(p, q).sqrt(), n + 1));
            (sum, n)
        };
        let (sa, na) = mean_to(assign[i]);
        if na == 0 {
            continue;
        }
        let a = sa / na as f64;
        let b = labels
            .iter()
            .filter(|c| **c != assign[i])
            .map(|&c| {
                let (s, n) = mean_to(c);
                s / n as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Some(total / points.len() as f64)
}

/// Run k-means for every k in range and keep the best silhouette; ties go
/// to the smaller k.
pub fn choose_k(points: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Option<(usize, Vec<usize>, f64)> {
    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    for k in k_min.max(2)..=k_max.min(points.len().saturating_sub(1)) {
        let assign = kmeans(points, k, seed.wrapping_add(k as u64));
        let Some(s) = silhouette(points, &assign) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| s > b.2) {
            best = Some((k, assign, s));
        }
    }
    best
}

/// Pick the key positions. Clusters are ranked by mean variance and taken
/// until they hold `coverage_q` of the total variance. Positions with too
/// few samples are always key, and every template keeps at least one key.
pub fn select_key_parameters(features: &[PositionFeatures], cfg: &KeySelectionConfig, seed: u64) -> KeySelection {
    let all: BTreeSet<(usize, usize)> = features.iter().map(|f| (f.template_id, f.position)).collect();
    let eligible: Vec<&PositionFeatures> = features.iter().filter(|f| f.samples >= cfg.min_samples).collect();
    if eligible.len() < 2 {
        return KeySelection { keys: all, k: None, fallback: Some(ParamError::TooFewSamples) };
    }
    let points: Vec<Vec<f64>> = eligible.iter().map(|f| f.point()).collect();
    let mut keys: BTreeSet<(usize, usize)> = features
        .iter()
        .filter(|f| f.samples < cfg.min_samples)
        .map(|f| (f.template_id, f.position))
        .collect();
    let total: f64 = eligible.iter().map(|f| f.variance).sum();
    let chosen = choose_k(&points, cfg.k_min, cfg.k_max, seed);
    let k = chosen.as_ref().map(|c| c.0);
    match chosen {
        Some((k, assign, _)) if total > 0.0 => {
            let mut clusters: Vec<(f64, f64, usize)> = (0..k)
                .filter_map(|c| {
                    let vs: Vec<f64> = eligible.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(f, _)| f.variance).collect();
                    (!vs.is_empty()).then(|| (vs.iter().sum::<f64>() / vs.len() as f64, vs.iter().sum(), c))
                })
                .collect();
            clusters.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
            let mut covered = 0.0;
            for (_, sum, c) in clusters {
                if covered >= cfg.coverage_q * total {
                    break;
                }
                covered += sum;
                keys.extend(eligible.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(f, _)| (f.template_id, f.position)));
            }
        }
        // Coincident features or no variance at all: nothing to separate.
        _ => keys = all.clone(),
    }
    let templates: BTreeSet<usize> = features.iter().map(|f| f.template_id).collect();
    for t in templates {
        if keys.iter().any(|(tt, _)| *tt == t) {
            continue;
        }
        let best = features
            .iter()
            .filter(|f| f.template_id == t)
            .max_by(|a, b| a.variance.total_cmp(&b.variance).then(b.position.cmp(&a.position)))
            .expect("template has features");
        keys.insert((t, best.position));
    }
    KeySelection { keys, k, fallback: None }
}
