//! Rule cascade that assigns a type to each parameter position.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

use super::resource::looks_like_resource;
use super::time::looks_like_time;
use super::{ParamType, MAX_STATES};

static KEY_VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_.\-]*)=(.*)$").expect("valid regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$").expect("valid regex")
});
static HEXISH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?i)(?:[a-z]{1,4}[-_]?)?[0-9a-f]{4,}$").expect("valid regex"));

const USER_MARKERS: &[&str] = &["user", "uid", "usr", "account", "login", "owner", "principal"];

/// Split an optional `key=` prefix off a raw token and strip trailing
/// punctuation and surrounding quotes from the value.
pub fn strip_key(raw: &str) -> (Option<&str>, &str) {
    let (key, value) = match KEY_VALUE.captures(raw) {
        Some(c) => (Some(c.get(1).unwrap().as_str()), c.get(2).unwrap().as_str()),
        None => (None, raw),
    };
    let value = value.trim_end_matches([',', ';']);
    let value = ['"', '\'']
        .iter()
        .find_map(|q| value.strip_prefix(*q).and_then(|v| v.strip_suffix(*q)))
        .unwrap_or(value);
    (key, value)
}

pub fn looks_numeric(v: &str) -> bool {
    NUMBER.is_match(v)
}

fn looks_like_user(value: &str, key: Option<&str>) -> bool {
    let marked = |s: &str| {
        let s = s.to_ascii_lowercase();
        USER_MARKERS.iter().any(|m| s.contains(m))
    };
    key.is_some_and(marked)
        || marked(value)
        || value.contains('@')
        || (HEXISH.is_match(value) && value.bytes().any(|b| b.is_ascii_digit()))
}

/// What the cascade knows about a position beyond the value itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PositionStats {
    /// Distinct non-empty values seen during training.
    pub distinct: usize,
    /// Most common `key=` prefix at the position.
    pub key: Option<String>,
    pub state_card_max: usize,
}

impl PositionStats {
    pub fn from_values<S: AsRef<str>>(values: &[S], state_card_max: usize) -> Self {
        let mut distinct = BTreeSet::new();
        let mut keys: BTreeMap<&str, usize> = BTreeMap::new();
        for v in values {
            let (k, v) = strip_key(v.as_ref());
            if let Some(k) = k {
                *keys.entry(k).or_default() += 1;
            }
            if !v.is_empty() {
                distinct.insert(v);
            }
        }
        let key = keys
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| k.to_string());
        Self {
            distinct: distinct.len(),
            key,
            state_card_max: state_card_max.min(MAX_STATES),
        }
    }
}

/// Type of one raw value. Empty values are `Unknown`; callers treat an
/// empty value at a typed position as an anomaly signal.
pub fn classify_parameter(raw: &str, stats: &PositionStats) -> ParamType {
    let (key, value) = strip_key(raw);
    let key = key.or(stats.key.as_deref());
    if value.is_empty() {
        ParamType::Unknown
    } else if looks_like_time(value) {
        ParamType::Time
    } else if looks_numeric(value) {
        ParamType::Numeric
    } else if looks_like_resource(value) {
        ParamType::ResourceId
    } else if stats.distinct > 0 && stats.distinct <= stats.state_card_max {
        ParamType::State
    } else if looks_like_user(value, key) {
        ParamType::UserId
    } else {
        ParamType::Unknown
    }
}

const RULE_ORDER: [ParamType; 6] = [
    ParamType::Time,
    ParamType::Numeric,
    ParamType::ResourceId,
    ParamType::State,
    ParamType::UserId,
    ParamType::Unknown,
];

/// Majority vote over the training values of one position; ties go to
/// the type earlier in the cascade. Empty values abstain.
pub fn classify_position<S: AsRef<str>>(values: &[S], state_card_max: usize) -> ParamType {
    let stats = PositionStats::from_values(values, state_card_max);
    let mut votes = [0usize; 6];
    for v in values {
        if strip_key(v.as_ref()).1.is_empty() {
            continue;
        }
        let t = classify_parameter(v.as_ref(), &stats);
        votes[RULE_ORDER.iter().position(|r| *r == t).unwrap()] += 1;
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return ParamType::Unknown;
    }
    RULE_ORDER[votes.iter().position(|&n| n == best).unwrap()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(distinct: usize) -> PositionStats {
        PositionStats { distinct, key: None, state_card_max: 16 }
    }

    #[test]
    fn cascade_examples() {
        assert_eq!(classify_parameter("2024-03-01 12:00:00", &stats(1)), ParamType::Time);
        assert_eq!(classify_parameter("79", &stats(200)), ParamType::Numeric);
        assert_eq!(classify_parameter("/var/log/app.log", &stats(1)), ParamType::ResourceId);
        assert_eq!(classify_parameter("success", &stats(2)), ParamType::State);
        assert_eq!(classify_parameter("u3f9a2c", &stats(40)), ParamType::UserId);
        assert_eq!(classify_parameter("bob", &stats(40)), ParamType::Unknown);
        assert_eq!(classify_parameter("user=bob", &stats(40)), ParamType::UserId);
    }

    #[test]
    fn key_prefixes_and_quotes() {
        assert_eq!(strip_key("user="), (Some("user"), ""));
        assert_eq!(strip_key("size=42,"), (Some("size"), "42"));
        assert_eq!(strip_key("'quoted'"), (None, "quoted"));
        assert_eq!(strip_key("http://h/a?b=c"), (None, "http://h/a?b=c"));
    }

    #[test]
    fn position_vote() {
        let ints: Vec<String> = (0..200).map(|i| i.to_string()).collect();
        assert_eq!(classify_position(&ints, 16), ParamType::Numeric);
        let mut mostly = ints.clone();
        mostly.push("abc".into());
        assert_eq!(classify_position(&mostly, 16), ParamType::Numeric);
        assert_eq!(classify_position(&["ok", "fail", "ok"], 16), ParamType::State);
        assert_eq!(classify_position(&["", ""], 16), ParamType::Unknown);
    }
}
