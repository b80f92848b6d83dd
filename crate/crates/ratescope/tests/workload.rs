use ratescope::workload::{
    classify_dual_phase, derive_seed, BenchConfig, Distribution, Phase, PhaseClass, PhaseSchedule, ServiceSpec,
};

#[test]
fn same_seed_same_service_times() {
    let a = ServiceSpec::new(Distribution::Exponential, 1e5, 42).unwrap();
    let b = ServiceSpec::new(Distribution::Exponential, 1e5, 42).unwrap();
    let c = ServiceSpec::new(Distribution::Exponential, 1e5, 43).unwrap();
    let xa: Vec<f64> = a.service_times().take(1000).collect();
    let xb: Vec<f64> = b.service_times().take(1000).collect();
    let xc: Vec<f64> = c.service_times().take(1000).collect();
    assert_eq!(xa, xb);
    assert_ne!(xa, xc);
}

#[test]
fn derived_seeds_differ_per_stream() {
    let seeds: std::collections::HashSet<u64> = (0..100).map(|s| derive_seed(7, s)).collect();
    assert_eq!(seeds.len(), 100);
    assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
}

#[test]
fn exponential_moments() {
    let spec = ServiceSpec::new(Distribution::Exponential, 1e5, 9).unwrap();
    let xs: Vec<f64> = spec.service_times().take(1_000_000).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean / 10_000.0 - 1.0).abs() < 0.005, "mean {mean}");
    assert!((sd / mean - 1.0).abs() < 0.02, "cv {}", sd / mean);
    assert!(xs.iter().all(|&x| x >= 0.0));
}

#[test]
fn deterministic_is_constant() {
    let spec = ServiceSpec::new(Distribution::Deterministic, 4e4, 1).unwrap();
    assert!(spec.service_times().take(1000).all(|x| x == 25_000.0));
}

#[test]
fn specs_reject_nonsense() {
    assert!(ServiceSpec::new(Distribution::Deterministic, 0.0, 1).is_err());
    assert!(ServiceSpec::new(Distribution::Deterministic, f64::NAN, 1).is_err());
    assert!(PhaseSchedule::new(vec![]).is_err());
    assert!("gamma".parse::<Distribution>().is_err());
    assert_eq!("exp".parse::<Distribution>().unwrap(), Distribution::Exponential);
}

#[test]
fn phase_items_and_rho() {
    let cfg = BenchConfig::for_phases(Distribution::Deterministic, &[(1e5, 2.0), (5e4, 4.0)], 7.5e4, 0).unwrap();
    let items: Vec<u64> = cfg.consumer.phases().iter().map(|p: &Phase| p.items).collect();
    assert_eq!(items, vec![150_000, 200_000]);
    assert_eq!(cfg.producer.total_items(), 350_000);
    assert_eq!(cfg.rho_per_phase(), vec![0.75, 1.0]);
    assert_eq!(cfg.rho(), 0.75);
}

#[test]
fn classification_uses_the_tolerance_band() {
    let c = classify_dual_phase(&[100.0, 50.0], 100.0, 50.0).unwrap();
    assert_eq!(c.class, PhaseClass::Both);
    let c = classify_dual_phase(&[119.0], 100.0, 50.0).unwrap();
    assert_eq!(c.class, PhaseClass::A);
    let c = classify_dual_phase(&[75.0], 100.0, 50.0).unwrap();
    assert_eq!(c.class, PhaseClass::Neither);
    let c = classify_dual_phase(&[], 100.0, 50.0).unwrap();
    assert_eq!(c.class, PhaseClass::Neither);
}
