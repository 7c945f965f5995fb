//! Skip-gram with negative sampling over template word sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, StoredEmbeddings, WordTable};
use crate::util::{normalize, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negative: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 4,
            negative: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cumulative unigram^0.75 distribution for negative draws.
fn noise_table(counts: &[u64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = counts
        .iter()
        .map(|&c| {
            acc += (c as f64).powf(0.75);
            acc
        })
        .collect();
    cdf.iter_mut().for_each(|x| *x /= acc);
    cdf
}

fn draw(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

/// Train word vectors on `corpus` (one word sequence per log entry, in
/// stream order). Words outside `table` are skipped.
///
/// The exported vector of a word is the normalized sum of its input and
/// output vectors, so words that co-occur end up close to each other and
/// not just to each other's contexts.
pub fn train_builtin_embeddings(
    corpus: &[Vec<String>],
    table: &WordTable,
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<StoredEmbeddings, EmbeddingError> {
    let vocab = table.len();
    let ids: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|w| table.id(w)).collect())
        .collect();
    let mut counts = vec![0u64; vocab];
    ids.iter().flatten().for_each(|&i| counts[i] += 1);
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    if distinct < 2 {
        return Err(EmbeddingError::InsufficientCorpus(distinct));
    }
    let dim = cfg.dim;
    let mut r = rng(seed);
    let mut input: Vec<f64> = (0..vocab * dim)
        .map(|_| (r.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0; vocab * dim];
    let cdf = noise_table(&counts.iter().map(|&c| c.max(1)).collect::<Vec<_>>());

    let total_steps = (cfg.epochs * ids.len()).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        for sentence in &ids {
            let lr = (cfg.lr * (1.0 - step as f64 / total_steps)).max(cfg.lr * 1e-4);
            step += 1;
            for (pos, &center) in sentence.iter().enumerate() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(sentence.len());
                for (cpos, &context) in sentence.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let center_row = center * dim..(center + 1) * dim;
                    for k in 0..=cfg.negative {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = draw(&cdf, r.gen::<f64>());
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out_row = target * dim..(target + 1) * dim;
                        let score: f64 = input[center_row.clone()]
                            .iter()
                            .zip(&output[out_row.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        let g = lr * (label - sigmoid(score));
                        grad.iter_mut()
                            .zip(&output[out_row.clone()])
                            .for_each(|(gi, o)| *gi += g * o);
                        output[out_row]
                            .iter_mut()
                            .zip(&input[center_row.clone()])
                            .for_each(|(o, i)| *o += g * i);
                    }
                    input[center_row]
                        .iter_mut()
                        .zip(&grad)
                        .for_each(|(i, g)| *i += g);
                }
            }
        }
    }

    let mut matrix = Vec::with_capacity(vocab * dim);
    for w in 0..vocab {
        let mut v: Vec<f64> = (0..dim)
            .map(|k| input[w * dim + k] + output[w * dim + k])
            .collect();
        normalize(&mut v);
        if v.iter().all(|x| *x == 0.0) {
            v = super::unknown_vector(&table.words()[w], dim);
        }
        matrix.extend(v);
    }
    StoredEmbeddings::new("skipgram", dim, table.clone(), matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingProvider;
    use crate::util::cosine;

    fn corpus(pairs: &[&[&str]], reps: usize) -> Vec<Vec<String>> {
        (0..reps)
            .flat_map(|_| pairs.iter().map(|s| s.iter().map(|w| w.to_string()).collect()))
            .collect()
    }

    #[test]
    fn co_occurring_words_end_up_closer() {
        // "login" and "logout" always share a window; "disk" never sees "login".
        let c = corpus(&[&["login", "logout"], &["logout", "login"], &["disk"], &["disk", "logout"]], 60);
        let table = WordTable::from_words(vec!["login".into(), "logout".into(), "disk".into()]);
        for seed in 0..5 {
            let e = train_builtin_embeddings(&c, &table, &SkipGramConfig { dim: 16, ..Default::default() }, seed).unwrap();
            let login = e.vector("login");
            let close = cosine(&login, &e.vector("logout")).unwrap();
            let far = cosine(&login, &e.vector("disk")).unwrap();
            assert!(close > far, "seed {seed}: {close} <= {far}");
        }
    }

    #[test]
    fn single_word_corpus_is_rejected() {
        let table = WordTable::from_words(vec!["only".into()]);
        let c = corpus(&[&["only", "only"]], 3);
        assert_eq!(
            train_builtin_embeddings(&c, &table, &SkipGramConfig::default(), 1),
            Err(EmbeddingError::InsufficientCorpus(1))
        );
    }

    #[test]
    fn seeded_training_is_reproducible_and_unit_norm() {
        let table = WordTable::from_words(vec!["a".into(), "b".into(), "c".into()]);
        let c = corpus(&[&["a", "b", "c"], &["c", "a"]], 20);
        let cfg = SkipGramConfig { dim: 8, ..Default::default() };
        let x = train_builtin_embeddings(&c, &table, &cfg, 42).unwrap();
        let y = train_builtin_embeddings(&c, &table, &cfg, 42).unwrap();
        assert_eq!(x.matrix(), y.matrix());
        assert_eq!(x.dim(), 8);
        for row in x.matrix().chunks(8) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
