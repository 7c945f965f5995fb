//! Fitted per-position parameter models, lane layouts and vector merging.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::classify::{classify_position, strip_key};
use super::keysel::{select_key_parameters, KeySelection, KeySelectionConfig, PositionFeatures};
use super::resource::{encode_resource, TfidfModel};
use super::time::{parse_time, TimeUnit, TimeUnits};
use super::{
    encode_numeric, encode_state, encode_user, parse_numeric, user_bucket, NumericBaseline,
    ParamError, ParamType, StateRegistry, MAX_STATES,
};
use crate::parser::{ParsedLog, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamConfig {
    pub state_card_max: usize,
    pub time_units: TimeUnits,
    pub eps: f64,
    pub z_cap: f64,
    pub tfidf_max_features: usize,
    pub key_selection: KeySelectionConfig,
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            state_card_max: 16,
            time_units: TimeUnits::default(),
            eps: 1e-9,
            z_cap: 10.0,
            tfidf_max_features: 256,
            key_selection: KeySelectionConfig::default(),
        }
    }
}

/// A successful encoding of one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Time(Vec<f64>),
    User(f64),
    Numeric(f64),
    State(f64),
    Resource(Vec<f64>),
}

impl Encoding {
    pub fn ptype(&self) -> ParamType {
        match self {
            Encoding::Time(_) => ParamType::Time,
            Encoding::User(_) => ParamType::UserId,
            Encoding::Numeric(_) => ParamType::Numeric,
            Encoding::State(_) => ParamType::State,
            Encoding::Resource(_) => ParamType::ResourceId,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Encoding::Time(v) | Encoding::Resource(v) => v,
            Encoding::User(x) | Encoding::Numeric(x) | Encoding::State(x) => std::slice::from_ref(x),
        }
    }
}

/// Everything learned about one placeholder position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionModel {
    pub position: usize,
    pub ptype: ParamType,
    pub key: bool,
    pub time_units: Vec<TimeUnit>,
    pub numeric: Option<NumericBaseline>,
    pub states: Option<StateRegistry>,
    pub tfidf: Option<TfidfModel>,
    /// Mean training encoding of a resource position.
    pub centroid: Option<Vec<f64>>,
    /// Training counts of user hash buckets.
    pub user_buckets: BTreeMap<u16, u32>,
}

impl PositionModel {
    fn untyped(position: usize) -> Self {
        Self {
            position,
            ptype: ParamType::Unknown,
            key: false,
            time_units: Vec::new(),
            numeric: None,
            states: None,
            tfidf: None,
            centroid: None,
            user_buckets: BTreeMap::new(),
        }
    }

    /// Width of this position's lane.
    pub fn width(&self) -> usize {
        match self.ptype {
            ParamType::Time => 2 * self.time_units.len(),
            ParamType::UserId | ParamType::Numeric | ParamType::State => 1,
            ParamType::ResourceId => self.tfidf.as_ref().map_or(0, TfidfModel::dim),
            ParamType::Unknown => 0,
        }
    }

    /// Encode one raw value with this position's fitted model.
    pub fn encode(&self, raw: &str, cfg: &ParamConfig) -> Result<Encoding, ParamError> {
        let (_, value) = strip_key(raw);
        if value.is_empty() {
            return Err(if self.ptype == ParamType::UserId {
                ParamError::EmptyUser
            } else {
                ParamError::EmptyValue
            });
        }
        match self.ptype {
            ParamType::Time => {
                let t = parse_time(value).map_err(|_| ParamError::InvalidTime(value.to_string()))?;
                Ok(Encoding::Time(t.encode(&self.time_units, &cfg.time_units)?))
            }
            ParamType::UserId => Ok(Encoding::User(encode_user(value)?)),
            ParamType::Numeric => {
                let x = parse_numeric(value)?;
                let b = self.numeric.as_ref().expect("numeric position has a baseline");
                Ok(Encoding::Numeric(encode_numeric(x, b, cfg.eps, cfg.z_cap)))
            }
            ParamType::State => {
                let r = self.states.as_ref().expect("state position has a registry");
                Ok(Encoding::State(encode_state(value, r)?))
            }
            ParamType::ResourceId => {
                let m = self.tfidf.as_ref().expect("resource position has a vocabulary");
                Ok(Encoding::Resource(encode_resource(value, m).0))
            }
            ParamType::Unknown => Err(ParamError::LayoutMismatch { position: self.position }),
        }
    }

    /// Map an encoding to the scale fed to the sequence model: states are
    /// divided by their top bit value, z-scores clamped to `±z_cap`.
    fn model_scale(&self, values: &mut [f64], cfg: &ParamConfig) {
        match self.ptype {
            ParamType::State => {
                let k = self.states.as_ref().map_or(1, StateRegistry::len).max(1);
                let top = (1u64 << (k - 1)) as f64;
                values.iter_mut().for_each(|v| *v /= top);
            }
            ParamType::Numeric => values.iter_mut().for_each(|v| *v = v.clamp(-cfg.z_cap, cfg.z_cap)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSlot {
    pub position: usize,
    pub ptype: ParamType,
    pub offset: usize,
    pub width: usize,
}

/// Fixed lane layout of one template: time slots first, then user,
/// numeric, state and resource, each group ordered by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<LaneSlot>,
    pub width: usize,
}

const LANE_ORDER: [ParamType; 5] = [
    ParamType::Time,
    ParamType::UserId,
    ParamType::Numeric,
    ParamType::State,
    ParamType::ResourceId,
];

impl Layout {
    pub fn new(slots: &[(usize, ParamType, usize)]) -> Self {
        let mut sorted: Vec<_> = slots.to_vec();
        sorted.sort_by_key(|(p, t, _)| (LANE_ORDER.iter().position(|l| l == t).unwrap_or(usize::MAX), *p));
        let mut offset = 0;
        let slots = sorted
            .into_iter()
            .map(|(position, ptype, width)| {
                let s = LaneSlot { position, ptype, offset, width };
                offset += width;
                s
            })
            .collect();
        Self { slots, width: offset }
    }

    pub fn slot(&self, position: usize) -> Option<&LaneSlot> {
        self.slots.iter().find(|s| s.position == position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    /// One presence bit per layout slot.
    pub mask: Vec<bool>,
}

/// Write each encoding into its slot. Slots without an encoding stay zero
/// with their mask bit cleared.
pub fn merge_param_vectors(encodings: &[(usize, Encoding)], layout: &Layout) -> Result<ParamVector, ParamError> {
    let mut v = ParamVector {
        values: vec![0.0; layout.width],
        mask: vec![false; layout.slots.len()],
    };
    for (position, enc) in encodings {
        let (i, slot) = layout
            .slots
            .iter()
            .enumerate()
            .find(|(_, s)| s.position == *position)
            .ok_or(ParamError::LayoutMismatch { position: *position })?;
        let values = enc.values();
        if slot.ptype != enc.ptype() || slot.width != values.len() {
            return Err(ParamError::LayoutMismatch { position: *position });
        }
        v.values[slot.offset..slot.offset + slot.width].copy_from_slice(values);
        v.mask[i] = true;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateParams {
    pub template_id: usize,
    pub positions: Vec<PositionModel>,
    pub layout: Layout,
}

impl TemplateParams {
    fn rebuild_layout(&mut self) {
        let slots: Vec<_> = self
            .positions
            .iter()
            .filter(|p| p.key && p.ptype != ParamType::Unknown)
            .map(|p| (p.position, p.ptype, p.width()))
            .collect();
        self.layout = Layout::new(&slots);
    }
}

/// Per-entry result: one outcome per key position plus the merged vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryEncoding {
    pub outcomes: Vec<(usize, Result<Encoding, ParamError>)>,
    pub vector: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamModels {
    pub config: ParamConfig,
    pub templates: BTreeMap<usize, TemplateParams>,
    pub selection_k: Option<usize>,
}

fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Fit models for one position and return its clustering features.
fn fit_position(
    template_id: usize,
    position: usize,
    raw: &[&str],
    cfg: &ParamConfig,
) -> (PositionModel, Option<PositionFeatures>) {
    let mut m = PositionModel::untyped(position);
    let values: Vec<&str> = raw.iter().map(|r| strip_key(r).1).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return (m, None);
    }
    m.ptype = classify_position(raw, cfg.state_card_max);
    let mut spread = 0.0;
    match m.ptype {
        ParamType::Time => {
            let parsed: Vec<_> = values.iter().filter_map(|v| parse_time(v).ok()).collect();
            m.time_units = super::time::TimeUnit::ALL
                .into_iter()
                .filter(|u| cfg.time_units.enabled(*u))
                .filter(|u| 2 * parsed.iter().filter(|t| t.get(*u).is_some()).count() >= parsed.len().max(1))
                .collect();
            for &u in &m.time_units {
                let enc: Vec<(f64, f64)> = parsed
                    .iter()
                    .filter_map(|t| t.get(u))
                    .filter_map(|t| super::encode_time(t, u, &cfg.time_units).ok())
                    .collect();
                let s: Vec<f64> = enc.iter().map(|e| e.0).collect();
                let c: Vec<f64> = enc.iter().map(|e| e.1).collect();
                spread = f64::max(spread, (variance(&s) + variance(&c)).min(1.0));
            }
            if m.time_units.is_empty() {
                m.ptype = ParamType::Unknown;
            }
        }
        ParamType::UserId => {
            let hs: Vec<f64> = values.iter().filter_map(|v| encode_user(v).ok()).collect();
            for v in &values {
                *m.user_buckets.entry(user_bucket(v)).or_default() += 1;
            }
            spread = (variance(&hs) * 12.0).min(1.0);
        }
        ParamType::Numeric => {
            let xs: Vec<f64> = values.iter().filter_map(|v| parse_numeric(v).ok()).collect();
            match NumericBaseline::fit(&xs) {
                Some(b) => {
                    spread = if b.std > cfg.eps { 1.0 } else { 0.0 };
                    m.numeric = Some(b);
                }
                None => m.ptype = ParamType::Unknown,
            }
        }
        ParamType::State => match StateRegistry::from_observed(values.iter().copied()) {
            Ok(r) => {
                let k = r.len();
                if k >= 2 {
                    let mut counts = vec![0usize; k];
                    values.iter().filter_map(|v| r.index(v)).for_each(|i| counts[i] += 1);
                    let n = values.len() as f64;
                    let gini = 1.0 - counts.iter().map(|c| (*c as f64 / n).powi(2)).sum::<f64>();
                    spread = gini / (1.0 - 1.0 / k as f64);
                }
                m.states = Some(r);
            }
            Err(_) => m.ptype = ParamType::ResourceId,
        },
        _ => {}
    }
    if m.ptype == ParamType::ResourceId {
        let tfidf = TfidfModel::fit(&values, cfg.tfidf_max_features);
        let encs: Vec<Vec<f64>> = values
            .iter()
            .map(|v| encode_resource(v, &tfidf))
            .filter(|(_, oov)| !oov)
            .map(|(e, _)| e)
            .collect();
        let mut centroid = vec![0.0; tfidf.dim()];
        for e in &encs {
            centroid.iter_mut().zip(e).for_each(|(c, x)| *c += x / encs.len() as f64);
        }
        spread = if encs.is_empty() { 0.0 } else { (1.0 - crate::util::dot(&centroid, &centroid)).max(0.0) };
        if tfidf.dim() == 0 {
            m.ptype = ParamType::Unknown;
        }
        m.centroid = Some(centroid);
        m.tfidf = Some(tfidf);
    }
    if m.ptype == ParamType::Unknown {
        return (m, None);
    }
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    let feats = PositionFeatures {
        template_id,
        position,
        ptype: m.ptype,
        variance: spread,
        distinct_ratio: distinct.len() as f64 / values.len() as f64,
        presence_rate: values.len() as f64 / raw.len() as f64,
        samples: values.len(),
    };
    (m, Some(feats))
}

impl ParamModels {
    /// Fit on matched training entries. Only entries whose parameter count
    /// equals the template's placeholder count are used.
    pub fn fit(templates: &[Template], entries: &[ParsedLog], cfg: &ParamConfig, seed: u64) -> Self {
        let mut by_template: BTreeMap<usize, Vec<&ParsedLog>> = BTreeMap::new();
        for e in entries {
            by_template.entry(e.template_id).or_default().push(e);
        }
        let mut out = BTreeMap::new();
        let mut features = Vec::new();
        for t in templates {
            let n = t.placeholder_count();
            let rows: Vec<&ParsedLog> = by_template
                .get(&t.id)
                .map(|v| v.iter().copied().filter(|e| e.params.len() == n).collect())
                .unwrap_or_default();
            let positions = (0..n)
                .map(|p| {
                    let raw: Vec<&str> = rows.iter().map(|e| e.params[p].as_str()).collect();
                    let (m, f) = fit_position(t.id, p, &raw, cfg);
                    features.extend(f);
                    m
                })
                .collect();
            out.insert(t.id, TemplateParams { template_id: t.id, positions, layout: Layout::default() });
        }
        let KeySelection { keys, k, .. } = select_key_parameters(&features, &cfg.key_selection, seed);
        for tp in out.values_mut() {
            for p in &mut tp.positions {
                p.key = keys.contains(&(tp.template_id, p.position));
            }
            tp.rebuild_layout();
        }
        Self { config: cfg.clone(), templates: out, selection_k: k }
    }

    pub fn template(&self, id: usize) -> Option<&TemplateParams> {
        self.templates.get(&id)
    }

    /// Widest layout over all templates; the model input pads to this.
    pub fn max_width(&self) -> usize {
        self.templates.values().map(|t| t.layout.width).max().unwrap_or(0)
    }

    /// Encode the key positions of one entry. Unknown templates or a
    /// parameter count that does not match give an empty result.
    pub fn encode_entry(&self, template_id: usize, params: &[String]) -> EntryEncoding {
        let empty = || EntryEncoding {
            outcomes: Vec::new(),
            vector: ParamVector { values: Vec::new(), mask: Vec::new() },
        };
        let Some(tp) = self.templates.get(&template_id) else {
            return empty();
        };
        if params.len() != tp.positions.len() {
            return EntryEncoding {
                outcomes: Vec::new(),
                vector: ParamVector { values: vec![0.0; tp.layout.width], mask: vec![false; tp.layout.slots.len()] },
            };
        }
        let outcomes: Vec<(usize, Result<Encoding, ParamError>)> = tp
            .layout
            .slots
            .iter()
            .map(|s| (s.position, tp.positions[s.position].encode(&params[s.position], &self.config)))
            .collect();
        let ok: Vec<(usize, Encoding)> = outcomes
            .iter()
            .filter_map(|(p, r)| r.as_ref().ok().map(|e| (*p, e.clone())))
            .collect();
        let vector = merge_param_vectors(&ok, &tp.layout).expect("encodings come from the layout");
        EntryEncoding { outcomes, vector }
    }

    /// Model input for one entry: scaled lanes zero-padded to `max_width`.
    pub fn model_features(&self, template_id: usize, params: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.max_width()];
        let Some(tp) = self.templates.get(&template_id) else {
            return out;
        };
        let enc = self.encode_entry(template_id, params);
        for (slot, present) in tp.layout.slots.iter().zip(&enc.vector.mask) {
            if !present {
                continue;
            }
            let lane = &mut out[slot.offset..slot.offset + slot.width];
            lane.copy_from_slice(&enc.vector.values[slot.offset..slot.offset + slot.width]);
            tp.positions[slot.position].model_scale(lane, &self.config);
        }
        out
    }

    pub fn key_positions(&self) -> Vec<(usize, usize)> {
        self.templates
            .values()
            .flat_map(|t| t.positions.iter().filter(|p| p.key).map(move |p| (t.template_id, p.position)))
            .collect()
    }
}

// Persisted form: one named section per model kind, keyed by
// (template, position).

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Keyed<T> {
    template: usize,
    position: usize,
    value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sections {
    config: ParamConfig,
    selection_k: Option<usize>,
    positions: BTreeMap<usize, usize>,
    types: Vec<Keyed<ParamType>>,
    key_positions: Vec<(usize, usize)>,
    time_units: Vec<Keyed<Vec<TimeUnit>>>,
    numeric_baselines: Vec<Keyed<NumericBaseline>>,
    state_registries: Vec<Keyed<StateRegistry>>,
    tfidf: Vec<Keyed<TfidfModel>>,
    resource_centroids: Vec<Keyed<Vec<f64>>>,
    user_buckets: Vec<Keyed<BTreeMap<u16, u32>>>,
}

impl Serialize for ParamModels {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut sec = Sections {
            config: self.config.clone(),
            selection_k: self.selection_k,
            positions: self.templates.iter().map(|(id, t)| (*id, t.positions.len())).collect(),
            types: Vec::new(),
            key_positions: self.key_positions(),
            time_units: Vec::new(),
            numeric_baselines: Vec::new(),
            state_registries: Vec::new(),
            tfidf: Vec::new(),
            resource_centroids: Vec::new(),
            user_buckets: Vec::new(),
        };
        for t in self.templates.values() {
            for p in &t.positions {
                let key = |value| Keyed { template: t.template_id, position: p.position, value };
                sec.types.push(key(p.ptype));
                if !p.time_units.is_empty() {
                    sec.time_units.push(Keyed { template: t.template_id, position: p.position, value: p.time_units.clone() });
                }
                if let Some(b) = &p.numeric {
                    sec.numeric_baselines.push(Keyed { template: t.template_id, position: p.position, value: b.clone() });
                }
                if let Some(r) = &p.states {
                    sec.state_registries.push(Keyed { template: t.template_id, position: p.position, value: r.clone() });
                }
                if let Some(m) = &p.tfidf {
                    sec.tfidf.push(Keyed { template: t.template_id, position: p.position, value: m.clone() });
                }
                if let Some(c) = &p.centroid {
                    sec.resource_centroids.push(Keyed { template: t.template_id, position: p.position, value: c.clone() });
                }
                if !p.user_buckets.is_empty() {
                    sec.user_buckets.push(Keyed { template: t.template_id, position: p.position, value: p.user_buckets.clone() });
                }
            }
        }
        sec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamModels {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let sec = Sections::deserialize(d)?;
        let mut templates: BTreeMap<usize, TemplateParams> = sec
            .positions
            .iter()
            .map(|(&id, &n)| {
                let positions = (0..n).map(PositionModel::untyped).collect();
                (id, TemplateParams { template_id: id, positions, layout: Layout::default() })
            })
            .collect();
        fn at<E: Error>(
            templates: &mut BTreeMap<usize, TemplateParams>,
            t: usize,
            p: usize,
        ) -> Result<&mut PositionModel, E> {
            templates
                .get_mut(&t)
                .and_then(|tp| tp.positions.get_mut(p))
                .ok_or_else(|| E::custom(format!("unknown parameter position {t}:{p}")))
        }
        for k in sec.types {
            at::<D::Error>(&mut templates, k.template, k.position)?.ptype = k.value;
        }
        for (t, p) in sec.key_positions {
            at::<D::Error>(&mut templates, t, p)?.key = true;
        }
        for k in sec.time_units {
            at::<D::Error>(&mut templates, k.template, k.position)?.time_units = k.value;
        }
        for k in sec.numeric_baselines {
            at::<D::Error>(&mut templates, k.template, k.position)?.numeric = Some(k.value);
        }
        for k in sec.state_registries {
            if k.value.len() > MAX_STATES {
                return Err(D::Error::custom("state registry too large"));
            }
            at::<D::Error>(&mut templates, k.template, k.position)?.states = Some(k.value);
        }
        for mut k in sec.tfidf {
            k.value.reindex();
            at::<D::Error>(&mut templates, k.template, k.position)?.tfidf = Some(k.value);
        }
        for k in sec.resource_centroids {
            at::<D::Error>(&mut templates, k.template, k.position)?.centroid = Some(k.value);
        }
        for k in sec.user_buckets {
            at::<D::Error>(&mut templates, k.template, k.position)?.user_buckets = k.value;
        }
        for tp in templates.values_mut() {
            for p in &tp.positions {
                let ready = match p.ptype {
                    ParamType::Numeric => p.numeric.is_some(),
                    ParamType::State => p.states.as_ref().is_some_and(|r| !r.is_empty()),
                    ParamType::ResourceId => p.tfidf.is_some(),
                    _ => true,
                };
                if !ready {
                    return Err(D::Error::custom(format!("position {}:{} lacks its model", tp.template_id, p.position)));
                }
            }
            tp.rebuild_layout();
        }
        Ok(Self { config: sec.config, templates, selection_k: sec.selection_k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_examples() {
        let layout = Layout::new(&[
            (3, ParamType::ResourceId, 2),
            (0, ParamType::Numeric, 1),
            (1, ParamType::Time, 2),
            (2, ParamType::State, 1),
            (4, ParamType::UserId, 1),
        ]);
        let kinds: Vec<_> = layout.slots.iter().map(|s| s.ptype).collect();
        assert_eq!(kinds, LANE_ORDER);
        assert_eq!(layout.width, 7);

        let v = merge_param_vectors(&[(1, Encoding::Time(vec![0.0, 1.0]))], &layout).unwrap();
        assert_eq!(v.values, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.mask, [true, false, false, false, false]);

        let none = merge_param_vectors(&[], &layout).unwrap();
        assert!(none.values.iter().all(|x| *x == 0.0) && none.mask.iter().all(|m| !m));

        assert_eq!(
            merge_param_vectors(&[(9, Encoding::User(0.5))], &layout),
            Err(ParamError::LayoutMismatch { position: 9 })
        );
        assert_eq!(
            merge_param_vectors(&[(0, Encoding::User(0.5))], &layout),
            Err(ParamError::LayoutMismatch { position: 0 })
        );
    }
}
