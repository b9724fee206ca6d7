mod common;

use common::{brute_plcc, brute_ranks, brute_srcc, exact_pearson};
use fiqa_core::metrics::{average_ranks, evaluate, plcc, srcc};
use proptest::prelude::*;

/// Spearman's closed form for vectors without ties.
fn spearman_no_ties(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let d2: f64 = brute_ranks(p).iter().zip(brute_ranks(g)).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn worked_examples() {
    let (p, g) = ([0.1, 0.3, 0.4], [1.0, 3.0, 2.0]);
    assert!((srcc(&p, &g).unwrap() - spearman_no_ties(&p, &g)).abs() < 1e-12);
    assert!((srcc(&p, &g).unwrap() - 0.5).abs() < 1e-12);

    let (p, g) = ([1.0, 1.0, 2.0], [1.0, 2.0, 3.0]);
    assert_eq!(brute_ranks(&p), vec![1.5, 1.5, 3.0]);
    assert!((srcc(&p, &g).unwrap() - exact_pearson(&[1.5, 1.5, 3.0], &[1.0, 2.0, 3.0], 0.0)).abs() < 1e-12);

    let (p, g) = ([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]);
    assert!((plcc(&p, &g).unwrap() - exact_pearson(&p, &g, 0.0)).abs() < 1e-12);
    assert!((plcc(&p, &g).unwrap() - 0.98198).abs() < 1e-5);
}

fn tied_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..200, 2u32..8).prop_flat_map(|(n, levels)| {
        let level = (0..levels).prop_map(move |k| k as f64 / levels as f64);
        (prop::collection::vec(level.clone(), n), prop::collection::vec(level, n))
    })
}

fn distinct_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::hash_set(0u32..1_000_000, n),
            prop::collection::hash_set(0u32..1_000_000, n),
        )
    })
    .prop_map(|(a, b)| {
        (
            a.into_iter().map(|x| x as f64 / 7.0).collect(),
            b.into_iter().map(|x| x as f64 / 3.0).collect(),
        )
    })
}

fn constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ranks_match_counting_oracle(v in prop::collection::vec(0u8..6, 1..100)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        prop_assert_eq!(average_ranks(&v), brute_ranks(&v));
    }

    #[test]
    fn tied_inputs_match_brute_force((p, g) in tied_vectors()) {
        prop_assume!(!constant(&p) && !constant(&g));
        prop_assert!((srcc(&p, &g).unwrap() - brute_srcc(&p, &g)).abs() < 1e-9);
        prop_assert!((plcc(&p, &g).unwrap() - brute_plcc(&p, &g)).abs() < 1e-9);
    }

    #[test]
    fn untied_srcc_matches_closed_form((p, g) in distinct_vectors()) {
        prop_assume!(p.len() >= 2);
        prop_assert!((srcc(&p, &g).unwrap() - spearman_no_ties(&p, &g)).abs() < 1e-9);
    }

    #[test]
    fn final_is_mean_of_both((p, g) in tied_vectors()) {
        prop_assume!(!constant(&p) && !constant(&g));
        let r = evaluate(&p, &g).unwrap();
        prop_assert_eq!(r.final_score, (r.srcc + r.plcc) / 2.0);
        prop_assert!((-1.0..=1.0).contains(&r.srcc) && (-1.0..=1.0).contains(&r.plcc));
        prop_assert_eq!(r.n, p.len());
    }
}
