//! Resource identifiers: paths, URLs and addresses as TF-IDF vectors.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const SEPARATORS: &[char] = &['/', '\\', '?', '&', '=', '.', ':'];

pub fn resource_tokens(r: &str) -> Vec<String> {
    r.split(SEPARATORS)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Vocabulary and smoothed idf weights frozen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    vocab: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TfidfModel {
    /// Fit on training strings. At most `max_features` tokens are kept,
    /// highest document frequency first, ties in first-seen order.
    pub fn fit<S: AsRef<str>>(docs: &[S], max_features: usize) -> Self {
        let mut df: Vec<(String, usize)> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        for d in docs {
            let mut toks = resource_tokens(d.as_ref());
            toks.sort();
            toks.dedup();
            for t in toks {
                let i = *slot.entry(t.clone()).or_insert_with(|| {
                    df.push((t, 0));
                    df.len() - 1
                });
                df[i].1 += 1;
            }
        }
        // Sorting a first-seen-ordered list stably keeps ties in that order.
        df.sort_by_key(|d| std::cmp::Reverse(d.1));
        df.truncate(max_features);
        let n = docs.len() as f64;
        let (vocab, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .map(|(t, f)| {
                let w = ((1.0 + n) / (1.0 + f as f64)).ln() + 1.0;
                (t, w)
            })
            .unzip();
        Self::from_parts(vocab, idf)
    }

    pub fn from_parts(vocab: Vec<String>, idf: Vec<f64>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { vocab, idf, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }
}

/// L2-normalized tf-idf vector. The flag is set when every token was out
/// of vocabulary and the vector is all zeros.
pub fn encode_resource(r: &str, model: &TfidfModel) -> (Vec<f64>, bool) {
    let mut v = vec![0.0; model.dim()];
    let mut hit = false;
    for t in resource_tokens(r) {
        if let Some(&i) = model.index.get(&t) {
            v[i] += model.idf[i];
            hit = true;
        }
    }
    crate::util::normalize(&mut v);
    (v, !hit)
}

static IPV4: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})(?::(\d{1,5}))?$").expect("valid regex")
});
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z0-9+.\-]*://[^\s/]+(/.*)?$").expect("valid regex"));
static PATH_CHARS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z0-9._\-~%/\\:?&=+@,]+$").expect("valid regex"));

fn well_formed_path(p: &str) -> bool {
    if !PATH_CHARS.is_match(p) {
        return false;
    }
    let body = p
        .strip_prefix("\\\\")
        .or_else(|| p.strip_prefix('/'))
        .or_else(|| p.strip_prefix("./"))
        .or_else(|| p.strip_prefix("~/"))
        .unwrap_or(p);
    let body = body.strip_suffix(['/', '\\']).unwrap_or(body);
    if body.is_empty() {
        return p.starts_with('/');
    }
    !body.split(['/', '\\']).any(str::is_empty)
}

/// Path, URL or IPv4 grammar check.
pub fn is_well_formed_resource(r: &str) -> bool {
    if let Some(c) = IPV4.captures(r) {
        let octets_ok = (1..=4).all(|i| c[i].parse::<u32>().is_ok_and(|o| o <= 255));
        let port_ok = c.get(5).is_none_or(|p| p.as_str().parse::<u32>().is_ok_and(|p| p <= 65_535));
        return octets_ok && port_ok;
    }
    if r.contains("://") {
        return URL.captures(r).is_some_and(|c| c.get(1).is_none_or(|p| well_formed_path(p.as_str())));
    }
    well_formed_path(r)
}

/// Loose shape test used by classification.
pub fn looks_like_resource(r: &str) -> bool {
    if IPV4.is_match(r) || r.contains("://") {
        return true;
    }
    let bytes = r.as_bytes();
    if bytes.len() > 2 && bytes[0].is_ascii_alphabetic() && bytes[1] == b':' && bytes[2] == b'\\' {
        return true;
    }
    r.starts_with('/') || r.starts_with("./") || r.starts_with("~/") || r.starts_with("\\\\")
        || (r.len() > 2 && r[1..r.len() - 1].contains('/'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{cosine, dot};

    #[test]
    fn two_document_hand_computation() {
        let docs = ["/var/log/app.log", "/var/log/sys.log"];
        let m = TfidfModel::fit(&docs, 256);
        // Tokens: var, log (df 2) and app, sys (df 1); N = 2.
        let shared = (3.0f64 / 3.0).ln() + 1.0;
        let unique = (3.0f64 / 2.0).ln() + 1.0;
        // tf: var 1, log 2, app/sys 1.
        let a = [shared, 2.0 * shared, unique, 0.0];
        let b = [shared, 2.0 * shared, 0.0, unique];
        let expected = dot(&a, &b) / dot(&a, &a);
        let (x, _) = encode_resource(docs[0], &m);
        let (y, _) = encode_resource(docs[1], &m);
        assert!((dot(&x, &y) - expected).abs() < 1e-12);
        assert!((expected - 5.0 / (5.0 + unique * unique)).abs() < 1e-12);
    }

    #[test]
    fn identical_disjoint_and_oov() {
        let m = TfidfModel::fit(&["/a/b", "/c/d"], 256);
        let (x, _) = encode_resource("/a/b", &m);
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let (y, _) = encode_resource("/c/d", &m);
        assert_eq!(dot(&x, &y), 0.0);
        let (z, oov) = encode_resource("/zzz", &m);
        assert!(oov && z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vocabulary_cap_keeps_frequent_tokens() {
        let m = TfidfModel::fit(&["/x/rare1", "/x/rare2", "/x/y", "/x/y"], 2);
        assert_eq!(m.vocab(), ["x", "y"]);
    }

    #[test]
    fn grammar() {
        for ok in ["/var/log/app.log", "192.168.1.1", "10.0.0.1:8080", "http://h/a?b=c", "C:\\dir\\f.txt", "./rel/x", "/"] {
            assert!(is_well_formed_resource(ok), "{ok}");
        }
        for bad in ["/var//log", "999.1.1.1", "/var/<bad>", "10.0.0.1:99999", "http:///x"] {
            assert!(!is_well_formed_resource(bad), "{bad}");
        }
        assert!(looks_like_resource("/var/log/app.log"));
        assert!(!looks_like_resource("alice"));
    }
}
