//! Template vectors built from weighted word vectors (itemplate2vec).
//!
//! Every literal word of a template is weighted by its mean cosine
//! similarity to the other literal words of the same template. Each word
//! vector is scaled by that weight and the template vector is the
//! weight-averaged mean of the scaled vectors. Words whose vector sits
//! close to the semantic centre of the template dominate; stray words
//! barely register.
//!
//! Word vectors come from an [`EmbeddingProvider`]. The built-in provider
//! is a skip-gram model trained on the historical template stream
//! ([`skipgram`]); [`external`] speaks a line-delimited JSON protocol so a
//! transformer-backed service can stand in without code changes.

pub mod external;
pub mod skipgram;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::Template;
use crate::util::{cosine, fnv1a64, norm, rng};

/// Sums of weights at or below this trigger the unweighted fallback.
pub const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("no literal words to build a word table from")]
    NoLiterals,
    #[error("need at least two distinct words to train embeddings, found {0}")]
    InsufficientCorpus(usize),
    #[error("word vector for {0:?} has zero norm")]
    ZeroVector(String),
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("vector dimension {got} does not match expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("invalid embedding document: {0}")]
    Format(String),
}

/// Normalized vocabulary key for a template token; `None` for tokens that
/// are pure punctuation.
pub fn word_key(token: &str) -> Option<String> {
    let trimmed = token.trim_matches(|c: char| c.is_ascii_punctuation());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Literal words of a template in positional order (duplicates kept).
pub fn template_words(template: &Template) -> Vec<String> {
    template.literals().filter_map(word_key).collect()
}

/// Deduplicated vocabulary over the template corpus, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordTable {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordTable {
    pub fn from_words(words: Vec<String>) -> Self {
        let mut table = Self::default();
        for w in words {
            table.insert(w);
        }
        table
    }

    fn insert(&mut self, word: String) {
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.words.len());
            self.words.push(word);
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn build_word_table(templates: &[Template]) -> Result<WordTable, EmbeddingError> {
    let mut table = WordTable::default();
    for t in templates {
        for w in template_words(t) {
            table.insert(w);
        }
    }
    if table.is_empty() {
        return Err(EmbeddingError::NoLiterals);
    }
    Ok(table)
}

/// Source of word vectors. Implementations must be referentially
/// transparent: the same word always yields the same vector.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn vectors(&self, words: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Deterministic unit vector for a word outside the vocabulary, seeded by
/// the word's FNV-1a hash.
pub fn unknown_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut r = rng(fnv1a64(word.as_bytes()));
    let mut v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = norm(&v);
    if n == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Word vectors held in memory: the trained table plus hashed unknown
/// vectors for anything outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEmbeddings {
    name: String,
    dim: usize,
    table: WordTable,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl StoredEmbeddings {
    pub fn new(name: impl Into<String>, dim: usize, table: WordTable, matrix: Vec<f64>) -> Result<Self, EmbeddingError> {
        if matrix.len() != dim * table.len() {
            return Err(EmbeddingError::Dimension {
                expected: dim * table.len(),
                got: matrix.len(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::Format("non-finite vector entry".into()));
        }
        Ok(Self {
            name: name.into(),
            dim,
            table,
            matrix,
        })
    }

    /// Snapshot every vocabulary word from another provider.
    pub fn from_provider(provider: &dyn EmbeddingProvider, table: &WordTable) -> Result<Self, EmbeddingError> {
        let vectors = provider.vectors(table.words())?;
        let dim = provider.dim();
        let mut matrix = Vec::with_capacity(dim * vectors.len());
        for v in &vectors {
            if v.len() != dim {
                return Err(EmbeddingError::Dimension { expected: dim, got: v.len() });
            }
            matrix.extend_from_slice(v);
        }
        Self::new(provider.name(), dim, table.clone(), matrix)
    }

    pub fn table(&self) -> &WordTable {
        &self.table
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn known(&self, word: &str) -> Option<&[f64]> {
        self.table
            .id(word)
            .map(|i| &self.matrix[i * self.dim..(i + 1) * self.dim])
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        self.known(word)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| unknown_vector(word, self.dim))
    }

    pub fn to_json(&self) -> String {
        let doc = EmbeddingDoc {
            name: Some(self.name.clone()),
            dim: self.dim,
            words: self.table.words().to_vec(),
            vectors: self.matrix.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_string(&doc).expect("embedding document serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, EmbeddingError> {
        let doc: EmbeddingDoc =
            serde_json::from_str(json).map_err(|e| EmbeddingError::Format(e.to_string()))?;
        if doc.words.len() != doc.vectors.len() {
            return Err(EmbeddingError::Format(format!(
                "{} words but {} vectors",
                doc.words.len(),
                doc.vectors.len()
            )));
        }
        let mut matrix = Vec::with_capacity(doc.dim * doc.words.len());
        for v in &doc.vectors {
            if v.len() != doc.dim {
                return Err(EmbeddingError::Dimension { expected: doc.dim, got: v.len() });
            }
            matrix.extend_from_slice(v);
        }
        let table = WordTable::from_words(doc.words);
        Self::new(doc.name.unwrap_or_else(|| "imported".into()), doc.dim, table, matrix)
    }
}

impl EmbeddingProvider for StoredEmbeddings {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vectors(&self, words: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(words.iter().map(|w| self.vector(w)).collect())
    }
}

/// Mean cosine similarity of word `i` to every other word of the template.
/// A single-word template gets weight 1.
pub fn word_weight(vectors: &[Vec<f64>], i: usize) -> Result<f64, EmbeddingError> {
    let n = vectors.len();
    if n == 1 {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for (j, other) in vectors.iter().enumerate() {
        if j == i {
            continue;
        }
        let zero = if norm(&vectors[i]) == 0.0 { i } else { j };
        sum += cosine(&vectors[i], other).ok_or_else(|| EmbeddingError::ZeroVector(format!("#{zero}")))?;
    }
    Ok(sum / (n - 1) as f64)
}

/// How the scaled word vectors are averaged into a template vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Weighted by the same similarity weights used for scaling.
    #[default]
    WeightedMean,
    /// Plain mean of the scaled vectors.
    UniformMean,
}

/// Template vector together with the intermediates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateVector {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled: Vec<Vec<f64>>,
    /// True when the weights summed to ~0 and the plain mean was used.
    pub fallback: bool,
}

/// Combine the word vectors of one template.
pub fn template_vector(vectors: &[Vec<f64>], dim: usize, pooling: Pooling) -> Result<TemplateVector, EmbeddingError> {
    if vectors.is_empty() {
        return Ok(TemplateVector {
            values: vec![0.0; dim],
            weights: Vec::new(),
            scaled: Vec::new(),
            fallback: true,
        });
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(EmbeddingError::Dimension { expected: dim, got: v.len() });
        }
        if norm(v) == 0.0 {
            return Err(EmbeddingError::ZeroVector(format!("#{i}")));
        }
    }
    let weights = (0..vectors.len())
        .map(|i| word_weight(vectors, i))
        .collect::<Result<Vec<_>, _>>()?;
    let scaled: Vec<Vec<f64>> = vectors
        .iter()
        .zip(&weights)
        .map(|(v, w)| v.iter().map(|x| x * w).collect())
        .collect();
    let mut values = vec![0.0; dim];
    let weight_sum: f64 = weights.iter().sum();
    let fallback = match pooling {
        Pooling::WeightedMean if weight_sum > WEIGHT_EPS => {
            for (s, w) in scaled.iter().zip(&weights) {
                values.iter_mut().zip(s).for_each(|(acc, x)| *acc += w * x);
            }
            values.iter_mut().for_each(|x| *x /= weight_sum);
            false
        }
        Pooling::UniformMean if weight_sum > WEIGHT_EPS => {
            for s in &scaled {
                values.iter_mut().zip(s).for_each(|(acc, x)| *acc += x);
            }
            values.iter_mut().for_each(|x| *x /= scaled.len() as f64);
            false
        }
        _ => {
            for v in vectors {
                values.iter_mut().zip(v).for_each(|(acc, x)| *acc += x);
            }
            values.iter_mut().for_each(|x| *x /= vectors.len() as f64);
            true
        }
    };
    Ok(TemplateVector {
        values,
        weights,
        scaled,
        fallback,
    })
}

/// Template vector for a mined template, looking its words up in `provider`.
pub fn vectorize_template(
    template: &Template,
    provider: &dyn EmbeddingProvider,
    pooling: Pooling,
) -> Result<TemplateVector, EmbeddingError> {
    let words = template_words(template);
    let vectors = if words.is_empty() {
        Vec::new()
    } else {
        provider.vectors(&words)?
    };
    template_vector(&vectors, provider.dim(), pooling)
}

/// Closest library entry by cosine similarity; ties go to the smaller id.
pub fn nearest_template(query: &[f64], library: &[(usize, Vec<f64>)]) -> Result<(usize, f64), EmbeddingError> {
    let mut best: Option<(usize, f64)> = None;
    for (id, v) in library {
        let sim = cosine(query, v).unwrap_or(0.0);
        match best {
            Some((bid, bsim)) if bsim > sim || (bsim == sim && bid < *id) => {}
            _ => best = Some((*id, sim)),
        }
    }
    best.ok_or(EmbeddingError::EmptyLibrary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{RawLog, TemplateMiner};

    fn templates(lines: &[&str]) -> Vec<Template> {
        let mut m = TemplateMiner::new(Default::default());
        for (i, l) in lines.iter().enumerate() {
            m.parse_line(&RawLog::new(i as u64, *l)).unwrap();
        }
        m.templates().to_vec()
    }

    #[test]
    fn word_table_dedups_in_first_seen_order() {
        let mut ts = templates(&["open file x1", "open file x2", "close file y1", "close file y2"]);
        assert_eq!(ts[0].to_string(), "open file <*>");
        let t = build_word_table(&ts).unwrap();
        assert_eq!(t.words(), ["open", "file", "close"]);
        ts.clear();
        assert_eq!(build_word_table(&ts), Err(EmbeddingError::NoLiterals));
        let t = build_word_table(&templates(&["a a b"])).unwrap();
        assert_eq!(t.words(), ["a", "b"]);
    }

    #[test]
    fn punctuation_words_are_dropped() {
        assert_eq!(word_key("Closed."), Some("closed".into()));
        assert_eq!(word_key("--"), None);
        assert_eq!(word_key("user="), Some("user".into()));
    }

    #[test]
    fn weights_for_simple_configurations() {
        let same = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!((word_weight(&same, 0).unwrap() - 1.0).abs() < 1e-12);
        let ortho = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(word_weight(&ortho, 1).unwrap().abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let three = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        assert!((word_weight(&three, 0).unwrap() - 0.353_553_390_593_273_8).abs() < 1e-12);
        assert!((word_weight(&three, 2).unwrap() - s).abs() < 1e-12);
        let zero = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(matches!(word_weight(&zero, 0), Err(EmbeddingError::ZeroVector(_))));
        assert_eq!(word_weight(&[vec![3.0, 1.0]], 0).unwrap(), 1.0);
    }

    #[test]
    fn template_vector_trivial_cases() {
        let v = vec![0.6, 0.8];
        let tv = template_vector(&[v.clone(), v.clone()], 2, Pooling::WeightedMean).unwrap();
        assert!(tv.values.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
        let tv = template_vector(std::slice::from_ref(&v), 2, Pooling::WeightedMean).unwrap();
        assert_eq!(tv.values, v);
        assert!(!tv.fallback);
    }

    #[test]
    fn three_word_template_by_hand() {
        // Weights (a, a, 2a) with a = 1/(2*sqrt 2); scaled vectors are
        // weight * v; result = sum w_i * (w_i v_i) / sum w_i.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = s / 2.0;
        let vs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let tv = template_vector(&vs, 2, Pooling::WeightedMean).unwrap();
        let sum = a + a + s;
        let x = (a * a + s * s * s) / sum;
        assert!((tv.values[0] - x).abs() < 1e-12);
        assert!((tv.values[1] - x).abs() < 1e-12);
        assert!((tv.weights[2] - s).abs() < 1e-12);
    }

    #[test]
    fn anticorrelated_words_fall_back() {
        let vs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let tv = template_vector(&vs, 2, Pooling::WeightedMean).unwrap();
        assert!(tv.fallback);
        assert_eq!(tv.weights, vec![-1.0, -1.0]);
        assert_eq!(tv.values, vec![0.0, 0.0]);
    }

    #[test]
    fn nearest_template_tie_break_and_errors() {
        let lib = vec![(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0]), (3, vec![1.0, 1.0])];
        assert_eq!(nearest_template(&[1.0, 1.0], &lib).unwrap().0, 3);
        assert_eq!(nearest_template(&[0.0, 2.0], &lib).unwrap(), (1, 1.0));
        let tie = vec![(5, vec![1.0, 0.0]), (2, vec![0.0, 1.0])];
        assert_eq!(nearest_template(&[1.0, 1.0], &tie).unwrap().0, 2);
        assert_eq!(nearest_template(&[1.0], &[]), Err(EmbeddingError::EmptyLibrary));
    }

    #[test]
    fn unknown_vectors_are_stable_unit_vectors() {
        let a = unknown_vector("zebra", 16);
        assert_eq!(a, unknown_vector("zebra", 16));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, unknown_vector("zebras", 16));
    }

    #[test]
    fn stored_embeddings_json_round_trip() {
        let table = WordTable::from_words(vec!["a".into(), "b".into()]);
        let e = StoredEmbeddings::new("t", 2, table, vec![1.0, 0.0, 0.25, -0.5]).unwrap();
        let back = StoredEmbeddings::from_json(&e.to_json()).unwrap();
        assert_eq!(back.matrix(), e.matrix());
        assert_eq!(back.table().words(), e.table().words());
        assert!(StoredEmbeddings::from_json(r#"{"dim":3,"words":["a"],"vectors":[[1,2]]}"#).is_err());
    }
}
