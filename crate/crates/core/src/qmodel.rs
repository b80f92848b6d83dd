//! M/M/1 probabilities of observing a whole sampling period of non-blocking
//! reads or writes.
//!
//! These are for experiment design and for explaining when the estimator can
//! work; the heuristic itself does not consume them.

use crate::{Error, Result};

// Products like 1e6 * 1e-4 land a few ulps above the intended integer.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationScenario {
    /// Mean service rate, items per second.
    pub mu_s: f64,
    /// Server utilization in (0, 1].
    pub rho: f64,
    /// Output queue capacity, items.
    pub capacity: u64,
    /// Sampling period, seconds.
    pub period_s: f64,
}

impl ObservationScenario {
    pub fn new(mu_s: f64, rho: f64, capacity: u64, period_s: f64) -> Result<Self> {
        let s = Self {
            mu_s,
            rho,
            capacity,
            period_s,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_s > 0.0 && self.mu_s.is_finite()) {
            return Err(Error::InvalidArgument("mu_s must be > 0"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument("rho must lie in (0, 1]"));
        }
        if self.capacity < 1 {
            return Err(Error::InvalidArgument("capacity must be >= 1"));
        }
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(Error::InvalidArgument("period must be > 0"));
        }
        Ok(())
    }

    /// Mean items the server consumes in one period, `mu_s * T`.
    pub fn demand(&self) -> f64 {
        self.mu_s * self.period_s
    }
}

/// `k = ceil(mu_s * T)`.
pub fn items_needed(scn: &ObservationScenario) -> u64 {
    let x = scn.demand();
    libm::ceil(x - x * CEIL_SLACK) as u64
}

fn powu(base: f64, exp: u64) -> f64 {
    libm::pow(base, exp as f64)
}

/// Probability that at least `k` items wait in the in-bound queue: `rho^k`.
pub fn pr_nonblocking_read(scn: &ObservationScenario) -> f64 {
    powu(scn.rho, items_needed(scn))
}

/// Probability the out-bound queue has room for a whole period of output:
/// `1 - rho^(C - k + 1)` when `C >= mu_s * T`, else 0.
pub fn pr_nonblocking_write(scn: &ObservationScenario) -> f64 {
    let demand = scn.demand();
    if (scn.capacity as f64) < demand - demand * CEIL_SLACK {
        return 0.0;
    }
    let k = items_needed(scn);
    if k > scn.capacity {
        // C >= mu_s T but C < ceil(mu_s T): no room for the k-th item
        return 0.0;
    }
    1.0 - powu(scn.rho, scn.capacity - k + 1)
}
