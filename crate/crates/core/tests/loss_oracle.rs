mod common;

use common::{exact_pearson, finite_difference, relative_error};
use fiqa_core::loss::{
    batch_loss, corr_loss, mse_loss, msecorr_loss, pearson, BatchScores, LossConfig, LossKind,
    DEFAULT_VARIANCE_EPSILON,
};
use proptest::prelude::*;

const EPS: f64 = DEFAULT_VARIANCE_EPSILON;

fn scores<'a>(p: &'a [f64], q: &'a [f64]) -> BatchScores<'a> {
    BatchScores::new(p, q).unwrap()
}

#[test]
fn worked_examples_match_the_oracle() {
    let (q, p) = ([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]);
    let r = exact_pearson(&p, &q, EPS);
    assert!((r - 0.98198).abs() < 1e-5);
    assert!((pearson(&scores(&p, &q), EPS).unwrap() - r).abs() < 1e-12);
    assert!((corr_loss(&scores(&p, &q), EPS).unwrap() - (1.0 - r)).abs() < 1e-12);
    assert!((1.0 - r - 0.01802).abs() < 1e-5);

    let cfg = LossConfig {
        alpha: 1.0,
        variance_epsilon: EPS,
    };
    let out = msecorr_loss(&scores(&p, &q), &cfg);
    assert!((out.value - (1.0 / 3.0 + 1.0 - r)).abs() < 1e-12);
    assert!((out.value - 0.35135).abs() < 1e-5);

    // Hand sum: (1 + 4 + 9) / 3.
    assert!((mse_loss(&scores(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0])) - 14.0 / 3.0).abs() < 1e-15);
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..128).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pearson_matches_exact_evaluation((p, q) in batch()) {
        if let Ok(r) = pearson(&scores(&p, &q), EPS) {
            prop_assert!((r - exact_pearson(&p, &q, EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_is_symmetric((p, q) in batch()) {
        let a = pearson(&scores(&p, &q), EPS);
        let b = pearson(&scores(&q, &p), EPS);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn objective_is_mse_plus_weighted_corr((p, q) in batch(), alpha in 0.0f64..2.0) {
        let cfg = LossConfig { alpha, variance_epsilon: EPS };
        let out = msecorr_loss(&scores(&p, &q), &cfg);
        let mse = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let expected = if out.degenerate { mse } else { mse + alpha * (1.0 - exact_pearson(&p, &q, EPS)) };
        prop_assert!((out.value - expected).abs() < 1e-9 * expected.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences((p, q) in batch(), alpha in 0.0f64..2.0) {
        let cfg = LossConfig { alpha, variance_epsilon: EPS };
        let out = msecorr_loss(&scores(&p, &q), &cfg);
        prop_assume!(!out.degenerate);
        let numeric = finite_difference(|x| msecorr_loss(&scores(x, &q), &cfg).value, &p, 1e-5);
        prop_assert!(relative_error(&out.grad, &numeric) < 1e-5);
    }

    #[test]
    fn zero_alpha_is_bitwise_mse((p, q) in batch()) {
        let cfg = LossConfig { alpha: 0.0, variance_epsilon: EPS };
        let a = batch_loss(LossKind::MseCorr, &scores(&p, &q), &cfg);
        let b = batch_loss(LossKind::Mse, &scores(&p, &q), &cfg);
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert!(a.grad.iter().zip(&b.grad).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn perfect_agreement_costs_nothing(q in prop::collection::vec(0.0f64..1.0, 2..64), alpha in 0.0f64..2.0) {
        let cfg = LossConfig { alpha, variance_epsilon: EPS };
        let out = msecorr_loss(&scores(&q, &q), &cfg);
        prop_assert!(out.value.abs() < 1e-6);
    }
}
