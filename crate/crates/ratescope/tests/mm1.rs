use ratescope::mm1::simulate_tail;

#[test]
fn tail_matches_geometric_law() {
    for (i, &(rho, k)) in [(0.2, 1u64), (0.5, 3), (0.75, 4)].iter().enumerate() {
        let est = simulate_tail(rho, k, 400_000, 20, i as u64).unwrap();
        let expected = rho.powi(k as i32);
        assert!(est.z_score(expected) < 4.0, "rho {rho} k {k}: {est:?}");
        assert!((0.0..=1.0).contains(&est.p_hat));
    }
}

#[test]
fn k_zero_is_certain() {
    let est = simulate_tail(0.6, 0, 10_000, 10, 1).unwrap();
    assert_eq!(est.p_hat, 1.0);
    assert_eq!(est.z_score(1.0), 0.0);
}

#[test]
fn events_round_down_to_whole_batches() {
    let est = simulate_tail(0.5, 1, 1_005, 10, 2).unwrap();
    assert_eq!(est.events, 1_000);
}
