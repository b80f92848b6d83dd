use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ratescope_core::streamstat::{quantile95, update_moments, OnlineMoments, Z95};

fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

proptest! {
    #[test]
    fn welford_matches_two_pass(
        xs in prop::collection::vec(-1e6f64..1e6, 2..2000),
        offset in prop::sample::select(vec![0.0, 1e6, 1e9, -1e9]),
    ) {
        let xs: Vec<f64> = xs.iter().map(|x| x + offset).collect();
        let m = xs.iter().fold(OnlineMoments::new(), |m, &x| update_moments(m, x));
        let (mean, var) = two_pass(&xs);
        prop_assert!(rel(m.mean, mean) < 1e-9);
        prop_assert!(rel(m.variance().unwrap(), var) < 1e-9);
        prop_assert!(m.m2 >= 0.0);
    }

    #[test]
    fn merge_equals_concatenation(
        a in prop::collection::vec(-1e3f64..1e3, 0..300),
        b in prop::collection::vec(-1e3f64..1e3, 0..300),
    ) {
        let whole: Vec<f64> = a.iter().chain(&b).copied().collect();
        let merged = OnlineMoments::from_slice(&a).merge(&OnlineMoments::from_slice(&b));
        let direct = OnlineMoments::from_slice(&whole);
        prop_assert_eq!(merged.n, direct.n);
        if direct.n > 0 {
            prop_assert!(rel(merged.mean, direct.mean) < 1e-9 || (merged.mean - direct.mean).abs() < 1e-9);
            prop_assert!(rel(merged.m2, direct.m2) < 1e-9 || (merged.m2 - direct.m2).abs() < 1e-6);
        }
    }
}

#[test]
fn million_values_near_a_billion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(1e9, 1.0).unwrap();
    let xs: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
    let m = OnlineMoments::from_slice(&xs);
    let (mean, var) = two_pass(&xs);
    assert!(rel(m.mean, mean) < 1e-9);
    assert!(rel(m.variance().unwrap(), var) < 1e-9);
}

#[test]
fn gaussian_quantile_is_near_analytic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(50.0, 5.0).unwrap();
    let m = OnlineMoments::from_slice(&(0..10_000).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>());
    let q = quantile95(&m).unwrap();
    let analytic = 50.0 + 1.6448536269514722 * 5.0;
    assert!(rel(q, analytic) < 0.01, "q = {q}, analytic = {analytic}");
    assert_eq!(q, m.mean + Z95 * m.variance().unwrap().sqrt());
}
