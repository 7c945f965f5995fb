use proptest::prelude::*;
use tplad::seqmodel::{forward_full, grad_check, top_g, Dims, ModelWeights, TrainingWindow};

fn window(dims: Dims, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = seed | 1;
    (0..len)
        .map(|_| {
            (0..dims.input)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_are_distributions(
        input in 1usize..6,
        hidden in 1usize..6,
        classes in 2usize..6,
        len in 1usize..5,
        seed in any::<u64>(),
    ) {
        let dims = Dims { input, hidden, attn: hidden, classes };
        let w = ModelWeights::init(dims, seed);
        let f = forward_full(&window(dims, len, seed), &w).unwrap();
        prop_assert_eq!(f.probs.len(), classes);
        prop_assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.probs.iter().all(|p| *p > 0.0));
        prop_assert_eq!(f.attention.len(), len);
        prop_assert!((f.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.attention.iter().all(|a| *a >= 0.0));
        prop_assert_eq!(f.context.len(), 2 * hidden);
    }

    #[test]
    fn saved_weights_forward_identically(seed in any::<u64>()) {
        let dims = Dims { input: 3, hidden: 4, attn: 4, classes: 5 };
        let w = ModelWeights::init(dims, seed);
        let back = ModelWeights::from_bytes(&w.to_bytes()).unwrap();
        prop_assert_eq!(&back, &w);
        let x = window(dims, 4, seed);
        let a = forward_full(&x, &w).unwrap().probs;
        let b = forward_full(&x, &back).unwrap().probs;
        prop_assert_eq!(a.iter().map(|p| p.to_bits()).collect::<Vec<_>>(), b.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn top_g_returns_the_largest(probs in prop::collection::vec(0.0f64..1.0, 1..10), g in 1usize..10) {
        let top = top_g(&probs, g);
        prop_assert_eq!(top.len(), g.min(probs.len()));
        let floor = top.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
        for (i, p) in probs.iter().enumerate() {
            if !top.contains(&i) {
                prop_assert!(*p <= floor);
            }
        }
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let dims = Dims { input: 3, hidden: 3, attn: 3, classes: 4 };
    let w = ModelWeights::init(dims, 11);
    let x = window(dims, 3, 11);
    let err = grad_check(&w, &TrainingWindow { inputs: &x, target: 2 }, 1e-5).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn corrupt_blobs_are_rejected() {
    let w = ModelWeights::init(Dims { input: 2, hidden: 2, attn: 2, classes: 2 }, 1);
    let bytes = w.to_bytes();
    assert!(ModelWeights::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(ModelWeights::from_bytes(b"garbage").is_err());
}
