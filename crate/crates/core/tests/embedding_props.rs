use proptest::prelude::*;
use tplad::embedding::{nearest_template, template_vector, word_weight, Pooling};

const DIM: usize = 5;

fn vecs(max_words: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f64..1.0, DIM).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3),
        1..=max_words,
    )
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Pairwise similarity matrix first, then weights, scaling and pooling.
fn brute_force(vs: &[Vec<f64>], pooling: Pooling) -> (Vec<f64>, Vec<f64>) {
    let n = vs.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            sim[i][j] = cos(&vs[i], &vs[j]);
        }
    }
    let w: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { (0..n).filter(|&j| j != i).map(|j| sim[i][j]).sum::<f64>() / (n - 1) as f64 })
        .collect();
    let wsum: f64 = w.iter().sum();
    let mut out = vec![0.0; DIM];
    for d in 0..DIM {
        out[d] = if wsum <= 1e-9 {
            vs.iter().map(|v| v[d]).sum::<f64>() / n as f64
        } else {
            match pooling {
                Pooling::WeightedMean => (0..n).map(|i| w[i] * w[i] * vs[i][d]).sum::<f64>() / wsum,
                Pooling::UniformMean => (0..n).map(|i| w[i] * vs[i][d]).sum::<f64>() / n as f64,
            }
        };
    }
    (w, out)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn matches_brute_force(vs in vecs(6), uniform in any::<bool>()) {
        let pooling = if uniform { Pooling::UniformMean } else { Pooling::WeightedMean };
        let tv = template_vector(&vs, DIM, pooling).unwrap();
        let (w, out) = brute_force(&vs, pooling);
        prop_assert!(close(&tv.weights, &w, 1e-9));
        prop_assert!(close(&tv.values, &out, 1e-9));
    }

    #[test]
    fn weights_are_bounded(vs in vecs(6)) {
        for i in 0..vs.len() {
            let w = word_weight(&vs, i).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&w));
        }
    }

    #[test]
    fn weights_ignore_vector_length(vs in vecs(6), scales in prop::collection::vec(0.01f64..100.0, 6)) {
        let scaled: Vec<Vec<f64>> = vs.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        let a = template_vector(&vs, DIM, Pooling::WeightedMean).unwrap();
        let b = template_vector(&scaled, DIM, Pooling::WeightedMean).unwrap();
        prop_assert!(close(&a.weights, &b.weights, 1e-9));
    }

    #[test]
    fn uniform_scale_scales_the_vector(vs in vecs(6), lambda in 0.01f64..100.0) {
        let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * lambda).collect()).collect();
        let a = template_vector(&vs, DIM, Pooling::WeightedMean).unwrap();
        let b = template_vector(&scaled, DIM, Pooling::WeightedMean).unwrap();
        let expect: Vec<f64> = a.values.iter().map(|x| x * lambda).collect();
        prop_assert!(close(&b.values, &expect, 1e-9));
    }

    #[test]
    fn word_order_does_not_matter(vs in vecs(6), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..vs.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| vs[i].clone()).collect();
        let a = template_vector(&vs, DIM, Pooling::WeightedMean).unwrap();
        let b = template_vector(&shuffled, DIM, Pooling::WeightedMean).unwrap();
        prop_assert!(close(&a.values, &b.values, 1e-9));
    }

    #[test]
    fn nearest_ignores_query_length(
        q in prop::collection::vec(-1.0f64..1.0, DIM),
        lib in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, DIM), 1..8),
        lambda in 0.01f64..100.0,
    ) {
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
        let lib: Vec<(usize, Vec<f64>)> = lib.into_iter().enumerate().collect();
        let scaled: Vec<f64> = q.iter().map(|x| x * lambda).collect();
        let (a, sa) = nearest_template(&q, &lib).unwrap();
        let (b, sb) = nearest_template(&scaled, &lib).unwrap();
        prop_assert!((sa - sb).abs() < 1e-9);
        if a != b {
            // Only a near tie may flip.
            let other = cos(&q, &lib[b].1);
            prop_assert!((other - sa).abs() < 1e-9);
        }
        let best = lib.iter().map(|(_, v)| cos(&q, v)).filter(|c| c.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sa + 1e-12 >= best);
    }
}

#[test]
fn single_word_keeps_its_vector() {
    let tv = template_vector(&[vec![0.5, -1.0, 0.0, 2.0, 1.0]], DIM, Pooling::WeightedMean).unwrap();
    assert_eq!(tv.weights, [1.0]);
    assert_eq!(tv.values, [0.5, -1.0, 0.0, 2.0, 1.0]);
}

#[test]
fn opposite_words_fall_back_to_the_mean() {
    let tv = template_vector(&[vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0, 0.0, 0.0]], DIM, Pooling::WeightedMean).unwrap();
    assert!(tv.fallback);
    assert_eq!(tv.values, [0.0; DIM]);
}
