//! Online template mining with a Drain-style fixed-depth prefix tree.
//!
//! Lines are bucketed first by token count, then by their leading
//! non-numeric tokens. Inside a leaf the template with the highest
//! token-match ratio absorbs the line if the ratio clears the similarity
//! threshold; disagreeing positions turn into `<*>` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rendering of a placeholder inside a template.
pub const PLACEHOLDER: &str = "<*>";

/// Version of the template library document.
pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line_no}: empty log body")]
    EmptyLine { line_no: u64 },
    #[error("token count {tokens} does not match template length {template}")]
    LengthMismatch { tokens: usize, template: usize },
    #[error("unsupported template library version {0}")]
    Version(u32),
    #[error("invalid template library: {0}")]
    Format(String),
}

/// One raw log record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLog {
    pub line_no: u64,
    pub timestamp_text: Option<String>,
    pub body: String,
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})?$").unwrap()
    })
}

impl RawLog {
    pub fn new(line_no: u64, body: impl Into<String>) -> Self {
        Self {
            line_no,
            timestamp_text: None,
            body: body.into(),
        }
    }

    /// Build a record from a full line, peeling off a leading ISO-8601
    /// timestamp header when one is present.
    pub fn from_line(line_no: u64, line: &str) -> Result<Self, ParseError> {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Err(ParseError::EmptyLine { line_no });
        }
        let (first, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((f, r)) => (f, r.trim_start()),
            None => (trimmed, ""),
        };
        if header_regex().is_match(first) && !rest.is_empty() {
            return Ok(Self {
                line_no,
                timestamp_text: Some(first.to_string()),
                body: rest.to_string(),
            });
        }
        Ok(Self::new(line_no, trimmed))
    }
}

/// Split a log body into whitespace-separated tokens.
pub fn tokenize(body: &str) -> Result<Vec<&str>, ParseError> {
    let tokens: Vec<&str> = body.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(ParseError::EmptyLine { line_no: 0 });
    }
    Ok(tokens)
}

/// Tokens carrying digits are treated as variables while descending the tree.
pub fn is_masked(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Literal(String),
    Placeholder,
}

impl Token {
    pub fn is_placeholder(&self) -> bool {
        matches!(self, Token::Placeholder)
    }

    pub fn literal(&self) -> Option<&str> {
        match self {
            Token::Literal(s) => Some(s),
            Token::Placeholder => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Literal(s) => f.write_str(s),
            Token::Placeholder => f.write_str(PLACEHOLDER),
        }
    }
}

// Library encoding: `{"lit": "word"}` for literals, `"*"` for placeholders.
impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Token::Literal(s) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("lit", s)?;
                map.end()
            }
            Token::Placeholder => serializer.serialize_str("*"),
        }
    }
}

struct TokenVisitor;

impl<'de> Visitor<'de> for TokenVisitor {
    type Value = Token;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(r#""*" or {"lit": string}"#)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Token, E> {
        if v == "*" {
            Ok(Token::Placeholder)
        } else {
            Err(E::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Token, A::Error> {
        let mut lit: Option<String> = None;
        while let Some(key) = map.next_key::<String>()? {
            if key != "lit" || lit.is_some() {
                return Err(de::Error::unknown_field(&key, &["lit"]));
            }
            lit = Some(map.next_value()?);
        }
        lit.map(Token::Literal)
            .ok_or_else(|| de::Error::missing_field("lit"))
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(TokenVisitor)
    }
}

/// A mined event template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: usize,
    pub tokens: Vec<Token>,
    #[serde(rename = "support")]
    pub support_count: u64,
}

impl Template {
    pub fn placeholder_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_placeholder()).count()
    }

    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(Token::literal)
    }

    /// Literal tokens matching `tokens` exactly at every position.
    pub fn covers(&self, tokens: &[&str]) -> bool {
        self.tokens.len() == tokens.len()
            && self
                .tokens
                .iter()
                .zip(tokens)
                .all(|(t, s)| t.literal().is_none_or(|l| l == *s))
    }

    /// Values at placeholder positions, in order.
    pub fn extract_params(&self, tokens: &[&str]) -> Vec<String> {
        self.tokens
            .iter()
            .zip(tokens)
            .filter(|(t, _)| t.is_placeholder())
            .map(|(_, s)| (*s).to_string())
            .collect()
    }

    /// Re-interleave literals with parameter values.
    pub fn reconstruct(&self, params: &[String]) -> Vec<String> {
        let mut params = params.iter();
        self.tokens
            .iter()
            .map(|t| match t {
                Token::Literal(s) => s.clone(),
                Token::Placeholder => params.next().cloned().unwrap_or_default(),
            })
            .collect()
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// A log record resolved to a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedLog {
    pub template_id: usize,
    pub params: Vec<String>,
    pub line_no: u64,
    pub matched: bool,
}

/// Ratio of positions where the token equals the literal or the template
/// holds a placeholder.
pub fn seq_similarity(tokens: &[&str], template: &Template) -> Result<f64, ParseError> {
    if tokens.len() != template.tokens.len() {
        return Err(ParseError::LengthMismatch {
            tokens: tokens.len(),
            template: template.tokens.len(),
        });
    }
    let hits = template
        .tokens
        .iter()
        .zip(tokens)
        .filter(|(t, s)| t.literal().is_none_or(|l| l == **s))
        .count();
    Ok(hits as f64 / tokens.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParserConfig {
    pub sim_threshold: f64,
    pub depth: usize,
    pub max_children: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            sim_threshold: 0.5,
            depth: 4,
            max_children: 100,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Node {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    children: BTreeMap<String, Node>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    templates: Vec<usize>,
}

/// Template library plus the prefix tree that indexes it.
///
/// Templates with an id below `protected_below` are read-only: they can
/// still absorb lines they already cover, but are never generalized. The
/// detector uses this to mine new templates online without touching the
/// trained ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateMiner {
    config: ParserConfig,
    root: BTreeMap<usize, Node>,
    templates: Vec<Template>,
    #[serde(default)]
    protected_below: usize,
}

#[derive(Serialize, Deserialize)]
struct LibraryDoc {
    version: u32,
    templates: Vec<Template>,
}

impl TemplateMiner {
    pub fn new(config: ParserConfig) -> Self {
        Self {
            config,
            root: BTreeMap::new(),
            templates: Vec::new(),
            protected_below: 0,
        }
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template(&self, id: usize) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Make every current template read-only.
    pub fn freeze(&mut self) {
        self.protected_below = self.templates.len();
    }

    pub fn protected_below(&self) -> usize {
        self.protected_below
    }

    fn prefix_keys<'a>(&self, tokens: &[&'a str]) -> Vec<&'a str> {
        let layers = self.config.depth.saturating_sub(2).max(1);
        let mut keys: Vec<&str> = tokens
            .iter()
            .copied()
            .filter(|t| !is_masked(t))
            .take(layers)
            .collect();
        keys.resize(layers, PLACEHOLDER);
        keys
    }

    fn leaf(&self, tokens: &[&str]) -> Option<&Node> {
        let mut node = self.root.get(&tokens.len())?;
        for key in self.prefix_keys(tokens) {
            node = node
                .children
                .get(key)
                .or_else(|| node.children.get(PLACEHOLDER))?;
        }
        Some(node)
    }

    fn leaf_mut(&mut self, tokens: &[&str]) -> &mut Node {
        let keys = self.prefix_keys(tokens);
        let max_children = self.config.max_children;
        let mut node = self.root.entry(tokens.len()).or_default();
        for key in keys {
            let key = if node.children.contains_key(key) || node.children.len() < max_children {
                key
            } else {
                PLACEHOLDER
            };
            node = node.children.entry(key.to_string()).or_default();
        }
        node
    }

    /// Best candidate in the leaf: (id, similarity). Protected templates
    /// are only eligible when they cover the line exactly.
    fn best_match(&self, tokens: &[&str]) -> Option<(usize, f64)> {
        let leaf = self.leaf(tokens)?;
        let mut best: Option<(usize, f64)> = None;
        for &id in &leaf.templates {
            let template = &self.templates[id];
            let Ok(sim) = seq_similarity(tokens, template) else {
                continue;
            };
            let eligible = if id < self.protected_below {
                sim >= 1.0
            } else {
                sim >= self.config.sim_threshold
            };
            if !eligible {
                continue;
            }
            match best {
                Some((bid, bsim)) if bsim > sim || (bsim == sim && bid < id) => {}
                _ => best = Some((id, sim)),
            }
        }
        best
    }

    /// Resolve a line against the library without mutating it.
    pub fn match_line(&self, raw: &RawLog) -> Result<Option<ParsedLog>, ParseError> {
        let tokens = tokenize(&raw.body).map_err(|_| ParseError::EmptyLine {
            line_no: raw.line_no,
        })?;
        Ok(self
            .best_match(&tokens)
            .map(|(id, _)| &self.templates[id])
            .filter(|t| t.covers(&tokens))
            .map(|t| ParsedLog {
                template_id: t.id,
                params: t.extract_params(&tokens),
                line_no: raw.line_no,
                matched: true,
            }))
    }

    /// Resolve a line, generalizing or minting templates as needed.
    pub fn parse_line(&mut self, raw: &RawLog) -> Result<ParsedLog, ParseError> {
        let tokens = tokenize(&raw.body).map_err(|_| ParseError::EmptyLine {
            line_no: raw.line_no,
        })?;
        let id = match self.best_match(&tokens) {
            Some((id, _)) if self.try_merge(id, &tokens) => id,
            _ => self.mint(&tokens),
        };
        let template = &self.templates[id];
        let params = template.extract_params(&tokens);
        debug_assert_eq!(params.len(), template.placeholder_count());
        Ok(ParsedLog {
            template_id: id,
            params,
            line_no: raw.line_no,
            matched: true,
        })
    }

    fn try_merge(&mut self, id: usize, tokens: &[&str]) -> bool {
        let template = &self.templates[id];
        let merged: Vec<Token> = template
            .tokens
            .iter()
            .zip(tokens)
            .map(|(t, s)| match t {
                Token::Literal(l) if l == s => t.clone(),
                _ => Token::Placeholder,
            })
            .collect();
        if merged.iter().all(Token::is_placeholder) {
            return false;
        }
        if id < self.protected_below && merged != template.tokens {
            return false;
        }
        let template = &mut self.templates[id];
        template.tokens = merged;
        template.support_count += 1;
        true
    }

    fn mint(&mut self, tokens: &[&str]) -> usize {
        let id = self.templates.len();
        self.templates.push(Template {
            id,
            tokens: tokens.iter().map(|t| Token::Literal((*t).to_string())).collect(),
            support_count: 1,
        });
        self.leaf_mut(tokens).templates.push(id);
        id
    }

    /// Serialize the template library document.
    pub fn library_json(&self) -> String {
        let doc = LibraryDoc {
            version: LIBRARY_VERSION,
            templates: self.templates.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("template library serializes")
    }

    /// Parse a library document into templates (the tree is not part of it).
    pub fn parse_library(json: &str) -> Result<Vec<Template>, ParseError> {
        let doc: LibraryDoc =
            serde_json::from_str(json).map_err(|e| ParseError::Format(e.to_string()))?;
        if doc.version > LIBRARY_VERSION {
            return Err(ParseError::Version(doc.version));
        }
        for (i, t) in doc.templates.iter().enumerate() {
            if t.id != i {
                return Err(ParseError::Format(format!("template ids must be dense, got {} at {i}", t.id)));
            }
            if t.literals().next().is_none() {
                return Err(ParseError::Format(format!("template {i} has no literal token")));
            }
        }
        Ok(doc.templates)
    }
}
