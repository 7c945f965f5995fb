use proptest::prelude::*;
use tplad::paramenc::{
    encode_numeric, encode_state, encode_time, encode_user, merge_param_vectors, select_key_parameters, Encoding,
    KeySelectionConfig, Layout, NumericBaseline, ParamType, PositionFeatures, StateRegistry, TimeUnit, TimeUnits,
};

fn unit() -> impl Strategy<Value = TimeUnit> {
    prop::sample::select(TimeUnit::ALL.to_vec())
}

proptest! {
    #[test]
    fn time_is_periodic(t in -1_000_000i64..1_000_000, k in -50i64..50, u in unit()) {
        let units = TimeUnits::default();
        let m = i64::from(units.max_t(u).unwrap());
        let (s0, c0) = encode_time(t, u, &units).unwrap();
        let (s1, c1) = encode_time(t + k * m, u, &units).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-12 && (c0 - c1).abs() <= 1e-12);
        prop_assert!((s0 * s0 + c0 * c0 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn adjacent_steps_are_equidistant(t in 0i64..10_000, u in unit()) {
        let units = TimeUnits::default();
        let m = f64::from(units.max_t(u).unwrap());
        let a = encode_time(t, u, &units).unwrap();
        let b = encode_time(t + 1, u, &units).unwrap();
        let chord = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        prop_assert!((chord - 2.0 * (std::f64::consts::PI / m).sin()).abs() <= 1e-12);
    }

    #[test]
    fn user_hash_is_in_unit_interval(u in ".{1,40}") {
        let x = encode_user(&u).unwrap();
        prop_assert!((0.0..1.0).contains(&x));
        prop_assert_eq!(x, encode_user(&u).unwrap());
    }

    #[test]
    fn z_score_survives_affine_maps(
        xs in prop::collection::vec(-1e3f64..1e3, 2..50),
        a in 0.1f64..10.0,
        b in -100.0f64..100.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let base = NumericBaseline::fit(&xs).unwrap();
        prop_assume!(base.std > 1e-6);
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let mapped = NumericBaseline::fit(&ys).unwrap();
        let x = xs[pick.index(xs.len())];
        let z0 = encode_numeric(x, &base, 1e-9, 10.0);
        let z1 = encode_numeric(a * x + b, &mapped, 1e-9, 10.0);
        prop_assert!((z0 - z1).abs() <= 1e-6 * (1.0 + z0.abs()));
    }

    #[test]
    fn state_codes_are_distinct_powers_of_two(n in 1usize..=30) {
        let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let reg = StateRegistry::from_observed(names.iter().map(String::as_str)).unwrap();
        let mut codes = Vec::new();
        for (i, s) in names.iter().enumerate() {
            let v = encode_state(s, &reg).unwrap();
            prop_assert_eq!(v, (1u64 << (n - 1 - i)) as f64);
            prop_assert_eq!(v as u64 & (v as u64 - 1), 0);
            codes.push(v as u64);
        }
        codes.sort_unstable();
        codes.dedup();
        prop_assert_eq!(codes.len(), n);
        prop_assert!(encode_state("never", &reg).is_err());
    }

    #[test]
    fn key_selection_is_deterministic(
        feats in prop::collection::vec((0usize..4, 0.0f64..1.0, 0.0f64..1.0, 1usize..40), 1..20),
        seed in any::<u64>(),
    ) {
        let features: Vec<PositionFeatures> = feats
            .iter()
            .enumerate()
            .map(|(i, &(t, variance, distinct_ratio, samples))| PositionFeatures {
                template_id: t,
                position: i,
                ptype: ParamType::Numeric,
                variance,
                distinct_ratio,
                presence_rate: 1.0,
                samples,
            })
            .collect();
        let cfg = KeySelectionConfig::default();
        let a = select_key_parameters(&features, &cfg, seed);
        let b = select_key_parameters(&features, &cfg, seed);
        prop_assert_eq!(&a.keys, &b.keys);
        let templates: std::collections::BTreeSet<usize> = features.iter().map(|f| f.template_id).collect();
        for t in templates {
            prop_assert!(a.keys.iter().any(|(tt, _)| *tt == t));
        }
        for f in features.iter().filter(|f| f.samples < cfg.min_samples) {
            prop_assert!(a.keys.contains(&(f.template_id, f.position)));
        }
    }

    #[test]
    fn mask_marks_exactly_the_filled_slots(present in prop::collection::vec(any::<bool>(), 4)) {
        let layout = Layout::new(&[
            (0, ParamType::Numeric, 1),
            (1, ParamType::Time, 4),
            (2, ParamType::State, 1),
            (3, ParamType::UserId, 1),
        ]);
        let encs = [
            (0, Encoding::Numeric(1.5)),
            (1, Encoding::Time(vec![0.1, 0.2, 0.3, 0.4])),
            (2, Encoding::State(4.0)),
            (3, Encoding::User(0.25)),
        ];
        let chosen: Vec<(usize, Encoding)> = encs.iter().zip(&present).filter(|(_, p)| **p).map(|(e, _)| e.clone()).collect();
        let v = merge_param_vectors(&chosen, &layout).unwrap();
        prop_assert_eq!(v.values.len(), layout.width);
        for (slot, bit) in layout.slots.iter().zip(&v.mask) {
            prop_assert_eq!(*bit, present[slot.position]);
            let lane = &v.values[slot.offset..slot.offset + slot.width];
            if *bit {
                prop_assert_eq!(lane, encs[slot.position].1.values());
            } else {
                prop_assert!(lane.iter().all(|x| *x == 0.0));
            }
        }
    }
}

#[test]
fn layout_orders_lanes_by_type() {
    let layout = Layout::new(&[(0, ParamType::State, 1), (1, ParamType::Time, 2), (2, ParamType::UserId, 1)]);
    let order: Vec<usize> = layout.slots.iter().map(|s| s.position).collect();
    assert_eq!(order, [1, 2, 0]);
    assert_eq!(layout.width, 4);
    let bad = merge_param_vectors(&[(0, Encoding::Numeric(1.0))], &layout);
    assert!(bad.is_err());
}
