use proptest::prelude::*;
use ratescope_core::qmodel::{items_needed, pr_nonblocking_read, pr_nonblocking_write, ObservationScenario};

proptest! {
    #[test]
    fn read_probability_falls_with_longer_periods(
        mu in 1.0f64..1e6,
        rho in 0.01f64..1.0,
        t1 in 1e-7f64..1e-2,
        factor in 1.0f64..100.0,
    ) {
        let short = ObservationScenario::new(mu, rho, 64, t1).unwrap();
        let long = ObservationScenario::new(mu, rho, 64, t1 * factor).unwrap();
        prop_assert!(items_needed(&long) >= items_needed(&short));
        prop_assert!(pr_nonblocking_read(&long) <= pr_nonblocking_read(&short));
    }

    #[test]
    fn read_probability_rises_with_utilization(
        mu in 1.0f64..1e6,
        rho in 0.01f64..1.0,
        bump in 0.0f64..1.0,
        t in 1e-7f64..1e-2,
    ) {
        let higher = (rho + bump * (1.0 - rho)).min(1.0);
        let lo = ObservationScenario::new(mu, rho, 8, t).unwrap();
        let hi = ObservationScenario::new(mu, higher, 8, t).unwrap();
        prop_assert!(pr_nonblocking_read(&hi) >= pr_nonblocking_read(&lo));
    }

    #[test]
    fn write_probability_rises_with_capacity(
        mu in 1.0f64..1e6,
        rho in 0.01f64..=1.0,
        t in 1e-7f64..1e-3,
        c in 1u64..10_000,
        extra in 0u64..10_000,
    ) {
        let small = ObservationScenario::new(mu, rho, c, t).unwrap();
        let big = ObservationScenario::new(mu, rho, c + extra, t).unwrap();
        let (ps, pb) = (pr_nonblocking_write(&small), pr_nonblocking_write(&big));
        prop_assert!((0.0..=1.0).contains(&ps));
        prop_assert!(pb >= ps);
    }
}
