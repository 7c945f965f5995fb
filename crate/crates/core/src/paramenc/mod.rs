//! Typed parameter encoding.
//!
//! Every placeholder position of a template gets a type (time, user id,
//! numeric, state, resource) fixed at training time. Each type has its own
//! encoder; the encodings of the key positions are laid out in fixed lanes
//! and concatenated into one [`ParamVector`] per log entry.

pub mod classify;
pub mod keysel;
pub mod model;
pub mod resource;
pub mod time;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a64;

pub use classify::{classify_parameter, classify_position, strip_key, PositionStats};
pub use keysel::{select_key_parameters, KeySelection, KeySelectionConfig, PositionFeatures};
pub use model::{
    merge_param_vectors, EntryEncoding, Encoding, LaneSlot, Layout, ParamConfig, ParamModels,
    ParamVector, PositionModel, TemplateParams,
};
pub use resource::{encode_resource, is_well_formed_resource, TfidfModel};
pub use time::{encode_time, parse_time, TimeUnit, TimeUnits, TimeValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamType {
    Time,
    UserId,
    Numeric,
    State,
    ResourceId,
    Unknown,
}

impl ParamType {
    /// Small numeric code used as a clustering feature.
    pub fn code(self) -> f64 {
        match self {
            ParamType::Time => 0.0,
            ParamType::UserId => 1.0,
            ParamType::Numeric => 2.0,
            ParamType::State => 3.0,
            ParamType::ResourceId => 4.0,
            ParamType::Unknown => 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("time unit {0:?} is not registered")]
    UnknownUnit(TimeUnit),
    #[error("empty user id")]
    EmptyUser,
    #[error("not a valid timestamp: {0:?}")]
    InvalidTime(String),
    #[error("empty value at a typed position")]
    EmptyValue,
    #[error("not a valid number: {0:?}")]
    NotANumber(String),
    #[error("state {0:?} is not in the registry")]
    UnseenState(String),
    #[error("state registry exceeds {max} entries")]
    RegistryFull { max: usize },
    #[error("encoding for position {position} does not fit the layout")]
    LayoutMismatch { position: usize },
    #[error("too few samples for key selection")]
    TooFewSamples,
}

/// FNV-1a 64 of the UTF-8 bytes, scaled into [0, 1).
pub fn encode_user(u: &str) -> Result<f64, ParamError> {
    if u.is_empty() {
        return Err(ParamError::EmptyUser);
    }
    let x = fnv1a64(u.as_bytes()) as f64 / 18_446_744_073_709_551_616.0;
    // Hashes within 2^10 of u64::MAX round up to 2^64.
    Ok(if x >= 1.0 { 1.0 - f64::EPSILON / 2.0 } else { x })
}

/// Histogram bucket of a user id: the top 16 bits of its hash.
pub fn user_bucket(u: &str) -> u16 {
    (fnv1a64(u.as_bytes()) >> 48) as u16
}

/// Parse a numeric parameter. Non-finite values count as invalid.
pub fn parse_numeric(raw: &str) -> Result<f64, ParamError> {
    if !classify::looks_numeric(raw) {
        return Err(ParamError::NotANumber(raw.to_string()));
    }
    match raw.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(ParamError::NotANumber(raw.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericBaseline {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl NumericBaseline {
    /// Population statistics over the finite values; `None` if there are none.
    pub fn fit(values: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            min: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: finite.len(),
        })
    }
}

/// z-score against the baseline. A degenerate baseline (`std < eps`) maps
/// the mean to 0 and anything else to `±z_cap`.
pub fn encode_numeric(x: f64, baseline: &NumericBaseline, eps: f64, z_cap: f64) -> f64 {
    let d = x - baseline.mean;
    if baseline.std < eps {
        if d.abs() <= eps {
            0.0
        } else {
            z_cap.copysign(d)
        }
    } else {
        d / baseline.std
    }
}

pub const MAX_STATES: usize = 30;

/// Ordered set of states seen at one position, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRegistry {
    states: Vec<String>,
}

impl StateRegistry {
    pub fn from_observed<'a>(values: impl IntoIterator<Item = &'a str>) -> Result<Self, ParamError> {
        let mut states: Vec<String> = Vec::new();
        for v in values {
            if !states.iter().any(|s| s == v) {
                if states.len() == MAX_STATES {
                    return Err(ParamError::RegistryFull { max: MAX_STATES });
                }
                states.push(v.to_string());
            }
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index(&self, s: &str) -> Option<usize> {
        self.states.iter().position(|x| x == s)
    }
}

/// One-hot over the registry read as a binary number, MSB first:
/// entry `i` of `k` maps to `2^(k-1-i)`.
pub fn encode_state(s: &str, registry: &StateRegistry) -> Result<f64, ParamError> {
    let i = registry
        .index(s)
        .ok_or_else(|| ParamError::UnseenState(s.to_string()))?;
    Ok((1u64 << (registry.len() - 1 - i)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn user_golden_value() {
        // FNV-1a64("alice") = 0x508b2abb65a03907, divided by 2^64.
        let h = 0x508b_2abb_65a0_3907u64;
        let expected = 5_803_779_529_149_266_183f64 / 2f64.powi(64);
        assert_eq!(h, 5_803_779_529_149_266_183);
        assert_eq!(encode_user("alice").unwrap(), expected);
        assert!((expected - 0.3146235187065266).abs() < 1e-16);
        assert_eq!(encode_user(""), Err(ParamError::EmptyUser));
    }

    #[test]
    fn numeric_z_scores() {
        let b = NumericBaseline::fit(&[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(b.mean, 4.0);
        assert!((b.std - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(encode_numeric(4.0, &b, 1e-9, 10.0), 0.0);
        assert!((encode_numeric(4.0 + 2.0 * b.std, &b, 1e-9, 10.0) - 2.0).abs() < 1e-12);
        let flat = NumericBaseline::fit(&[2.0, 2.0]).unwrap();
        assert_eq!(encode_numeric(2.0, &flat, 1e-9, 10.0), 0.0);
        assert_eq!(encode_numeric(1.0, &flat, 1e-9, 10.0), -10.0);
        assert_eq!(parse_numeric("abc"), Err(ParamError::NotANumber("abc".into())));
        assert!(parse_numeric("1e999").is_err());
        assert_eq!(parse_numeric("-2.5").unwrap(), -2.5);
    }

    #[test]
    fn state_bits() {
        let r = StateRegistry::from_observed(["success", "fail", "success"]).unwrap();
        assert_eq!(encode_state("success", &r).unwrap(), 2.0);
        assert_eq!(encode_state("fail", &r).unwrap(), 1.0);
        assert_eq!(
            encode_state("timeout", &r),
            Err(ParamError::UnseenState("timeout".into()))
        );
        let many: Vec<String> = (0..31).map(|i| format!("s{i}")).collect();
        assert_eq!(
            StateRegistry::from_observed(many.iter().map(String::as_str)),
            Err(ParamError::RegistryFull { max: 30 })
        );
    }
}
