use fiqa_core::inference::fuse;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn grid() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 1usize..6).prop_flat_map(|(m, t)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, t), m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fused_is_mean_of_model_means(g in grid()) {
        let (per_model, fused) = fuse(&g);
        let direct: Vec<f64> = g.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect();
        for (a, b) in per_model.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((fused - direct.iter().sum::<f64>() / direct.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn fused_is_order_free_and_bounded(g in grid(), seed in any::<u64>()) {
        let (_, fused) = fuse(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = g.clone();
        h.reverse();
        for row in &mut h {
            let k = rng.random_range(0..row.len());
            row.rotate_left(k);
        }
        prop_assert_eq!(fuse(&h).1.to_bits(), fused.to_bits());
        let lo = g.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= fused && fused <= hi);
    }

    #[test]
    fn constant_grid_fuses_to_the_constant(c in -5.0f64..5.0, m in 1usize..5, t in 1usize..6) {
        prop_assert_eq!(fuse(&vec![vec![c; t]; m]).1, c);
    }

    #[test]
    fn fused_error_never_exceeds_mean_member_error(
        truth in prop::collection::vec(0.0f64..1.0, 2..40),
        noise in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 40), 2..4),
    ) {
        let preds: Vec<Vec<f64>> = noise.iter().map(|e| truth.iter().zip(e).map(|(t, n)| t + n).collect()).collect();
        let mse = |p: &[f64]| p.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64;
        let fused: Vec<f64> = (0..truth.len())
            .map(|i| fuse(&preds.iter().map(|p| vec![p[i]]).collect::<Vec<_>>()).1)
            .collect();
        let mean_member = preds.iter().map(|p| mse(p)).sum::<f64>() / preds.len() as f64;
        prop_assert!(mse(&fused) <= mean_member + 1e-12);
    }
}

/// Averaging T views with independent noise divides the variance by T.
#[test]
fn view_averaging_reduces_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let trials = 4000;
    for (m, t) in [(1, 3), (2, 3), (2, 1)] {
        let fused: Vec<f64> = (0..trials)
            .map(|_| {
                let g: Vec<Vec<f64>> = (0..m).map(|_| (0..t).map(|_| 0.5 + noise.sample(&mut rng)).collect()).collect();
                fuse(&g).1
            })
            .collect();
        let mean = fused.iter().sum::<f64>() / trials as f64;
        let var = fused.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (trials - 1) as f64;
        let expected = 0.01 / (m * t) as f64;
        // Sample variance has relative standard error sqrt(2 / (trials - 1)) ~ 2.2%.
        assert!((var / expected - 1.0).abs() < 0.1, "M={m} T={t}: variance {var} vs {expected}");
        assert!((mean - 0.5).abs() < 4.0 * (expected / trials as f64).sqrt());
    }
}
