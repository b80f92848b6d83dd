//! Event-driven M/M/1 simulation for checking the observation model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-average estimate of `P(N >= k)` with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub rho: f64,
    pub k: u64,
    pub events: u64,
    pub batches: usize,
    pub p_hat: f64,
    pub std_err: f64,
}

impl TailEstimate {
    /// `|p_hat - expected|` in units of the standard error.
    pub fn z_score(&self, expected: f64) -> f64 {
        let d = (self.p_hat - expected).abs();
        if self.std_err > 0.0 {
            d / self.std_err
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Simulates `events` arrivals and departures of an M/M/1 queue with unit
/// service rate and arrival rate `rho`, starting from the stationary
/// distribution, and measures the fraction of time with at least `k` in the
/// system.
pub fn simulate_tail(rho: f64, k: u64, events: u64, batches: usize, seed: u64) -> Result<TailEstimate> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config("simulation needs 0 < rho < 1".into()));
    }
    if batches < 2 || events < batches as u64 {
        return Err(Error::Config("need at least two batches of one event".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stationary start: P(N = n) = (1 - rho) rho^n
    let mut n = {
        let u: f64 = rng.random();
        ((1.0 - u).ln() / rho.ln()).floor() as u64
    };
    let per_batch = events / batches as u64;
    let mut fractions = Vec::with_capacity(batches);
    for _ in 0..batches {
        let (mut total, mut above) = (0.0, 0.0);
        for _ in 0..per_batch {
            let rate = if n == 0 { rho } else { rho + 1.0 };
            let dt = exp_sample(&mut rng, rate);
            total += dt;
            if n >= k {
                above += dt;
            }
            if n == 0 || rng.random::<f64>() < rho / (rho + 1.0) {
                n += 1;
            } else {
                n -= 1;
            }
        }
        fractions.push(above / total);
    }
    let b = batches as f64;
    let mean = fractions.iter().sum::<f64>() / b;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok(TailEstimate {
        rho,
        k,
        events: per_batch * batches as u64,
        batches,
        p_hat: mean,
        std_err: (var / b).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_reproducible() {
        let a = simulate_tail(0.5, 2, 10_000, 10, 3).unwrap();
        let b = simulate_tail(0.5, 2, 10_000, 10, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.std_err > 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(simulate_tail(1.0, 1, 1000, 10, 0).is_err());
        assert!(simulate_tail(0.5, 1, 1000, 1, 0).is_err());
    }
}
