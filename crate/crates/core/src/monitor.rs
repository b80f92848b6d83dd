//! The service-rate heuristic as a deterministic state machine.
//!
//! Every sampling period the driver hands [`RateHeuristic::observe`] one
//! [`TransactionSnapshot`]. Periods in which the monitored end blocked, or
//! whose realized length strayed from `T`, are dropped. The rest feed a
//! sliding window `S`; each time the window is full it is Gaussian-filtered,
//! the 95th quantile `q` of the filtered image is taken, and `q` updates the
//! running mean `q̄`. A Laplacian-of-Gaussian filter over the relative step
//! size of `q̄` decides convergence; on convergence a [`RateEstimate`] is
//! emitted and the `q` statistics restart so that later phases are tracked.

use alloc::collections::VecDeque;

use crate::ique::{Side, TransactionSnapshot};
use crate::streamstat::{gaussian_kernel, log_kernel, FilterKernel, OnlineMoments, SampleWindow, Z95};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MonitorConfig {
    /// Fixed sampling period; `None` means use the calibrated one.
    pub period_ns: Option<u64>,
    /// Size `w` of the sliding window `S`.
    pub window: usize,
    pub gaussian_radius: usize,
    pub normalize_gaussian: bool,
    pub log_sigma: f64,
    pub log_radius: usize,
    /// Number of LoG-filtered values that must all sit inside `tolerance`.
    pub convergence_window: usize,
    pub tolerance: f64,
    /// Periods whose realized length differs from `T` by more than
    /// `epsilon * T` are discarded.
    pub epsilon: f64,
    /// Minimum fraction of usable periods per reporting horizon.
    pub undeterminable_fraction: f64,
    /// Periods per usability report.
    pub reporting_horizon: u64,
    pub side: Side,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            period_ns: None,
            window: 64,
            gaussian_radius: 2,
            normalize_gaussian: true,
            log_sigma: 0.5,
            log_radius: 1,
            convergence_window: 16,
            tolerance: 5e-7,
            epsilon: 0.05,
            undeterminable_fraction: 0.01,
            reporting_horizon: 1_000,
            side: Side::Head,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gaussian_radius < 1 {
            return Err(Error::InvalidArgument("gaussian radius must be >= 1"));
        }
        if self.window <= 2 * self.gaussian_radius + 1 {
            return Err(Error::InvalidArgument(
                "window must exceed the Gaussian kernel width by at least two",
            ));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidArgument("convergence window must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be > 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.undeterminable_fraction) {
            return Err(Error::InvalidArgument("undeterminable fraction must lie in [0, 1]"));
        }
        if self.reporting_horizon == 0 {
            return Err(Error::InvalidArgument("reporting horizon must be >= 1"));
        }
        if self.period_ns == Some(0) {
            return Err(Error::InvalidArgument("period override must be > 0"));
        }
        Ok(())
    }
}

/// A converged service-rate estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateEstimate {
    /// Mean of the per-window 95th quantiles, items per period.
    pub q_bar: f64,
    /// Bytes per item.
    pub item_size: u64,
    pub period_ns: u64,
    pub rate_items_per_sec: f64,
    pub rate_bytes_per_sec: f64,
    /// Number of `q` observations behind `q_bar`.
    pub n_q: u64,
    pub wall_clock_ns: u64,
    pub phase_index: u32,
    pub period_index: u64,
}

impl RateEstimate {
    pub fn items_per_sec(q_bar: f64, period_ns: u64) -> f64 {
        q_bar * 1e9 / period_ns as f64
    }

    /// `q̄ · d / T`, with `T` converted from nanoseconds.
    pub fn bytes_per_sec(q_bar: f64, item_size: u64, period_ns: u64) -> f64 {
        q_bar * item_size as f64 * 1e9 / period_ns as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "status", rename_all = "snake_case"))]
pub enum MonitorStatus {
    /// Too few non-blocked periods over the last reporting horizon.
    Undeterminable {
        period_index: u64,
        periods: u64,
        usable: u64,
        fraction: f64,
    },
}

/// Convergence test on the running mean of `q`.
///
/// The dispersion signal is the relative step of `q̄` per new `q`,
/// `|q̄ₙ − q̄ₙ₋₁| / |q̄ₙ|`. It is passed through the combined
/// Laplacian-of-Gaussian kernel, and the tracker reports convergence once the
/// last `window` filtered values all have magnitude below `tolerance`.
#[derive(Debug, Clone)]
pub struct ConvergenceTracker {
    q_moments: OnlineMoments,
    dispersion: VecDeque<f64>,
    log_filtered: VecDeque<f64>,
    kernel: FilterKernel,
    window: usize,
    tolerance: f64,
    converged: bool,
    phase_index: u32,
    taps: alloc::vec::Vec<f64>,
}

impl ConvergenceTracker {
    pub fn new(kernel: FilterKernel, window: usize, tolerance: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidArgument("convergence window must be >= 1"));
        }
        let width = kernel.weights().len();
        Ok(Self {
            q_moments: OnlineMoments::new(),
            dispersion: VecDeque::with_capacity(width),
            log_filtered: VecDeque::with_capacity(window),
            kernel,
            window,
            tolerance,
            converged: false,
            phase_index: 0,
            taps: alloc::vec::Vec::with_capacity(width),
        })
    }

    pub fn from_config(cfg: &MonitorConfig) -> Result<Self> {
        let kernel = log_kernel(cfg.log_sigma, cfg.log_radius)?;
        Self::new(kernel, cfg.convergence_window, cfg.tolerance)
    }

    /// Adds `q`, updates the filtered dispersion, and reports convergence.
    pub fn check_convergence(&mut self, q: f64) -> bool {
        let prev = (self.q_moments.n > 0).then_some(self.q_moments.mean);
        self.q_moments.update(q);
        if let Some(prev) = prev {
            let q_bar = self.q_moments.mean;
            let step = (q_bar - prev).abs();
            let scale = q_bar.abs();
            let d = if scale > 0.0 { step / scale } else { step };
            let width = self.kernel.weights().len();
            if self.dispersion.len() == width {
                self.dispersion.pop_front();
            }
            self.dispersion.push_back(d);
            if self.dispersion.len() == width {
                self.taps.clear();
                self.taps.extend(self.dispersion.iter().copied());
                let v = self.kernel.dot(&self.taps);
                if self.log_filtered.len() == self.window {
                    self.log_filtered.pop_front();
                }
                self.log_filtered.push_back(v);
            }
        }
        self.converged = self.log_filtered.len() == self.window
            && self
                .log_filtered
                .iter()
                .all(|v| v.abs() < self.tolerance);
        self.converged
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    /// Clears the `q` statistics after a convergence and advances the phase.
    pub fn reset_after_convergence(&mut self) -> Result<u32> {
        if !self.converged {
            return Err(Error::NotConverged);
        }
        self.q_moments.clear();
        self.dispersion.clear();
        self.log_filtered.clear();
        self.converged = false;
        self.phase_index += 1;
        Ok(self.phase_index)
    }

    pub fn q_bar(&self) -> Option<f64> {
        (self.q_moments.n > 0).then_some(self.q_moments.mean)
    }

    pub fn q_moments(&self) -> &OnlineMoments {
        &self.q_moments
    }

    pub fn n_q(&self) -> u64 {
        self.q_moments.n
    }

    pub fn phase_index(&self) -> u32 {
        self.phase_index
    }

    pub fn log_filtered(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.log_filtered.iter().copied()
    }

    pub fn last_dispersion(&self) -> Option<f64> {
        self.dispersion.back().copied()
    }
}

/// What happened to one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disposition {
    /// The monitored end blocked during the period.
    Blocked,
    /// Realized period outside `epsilon * T`.
    OffPeriod,
    /// Accepted into `S`; the window is not yet full.
    Filling,
    /// Accepted, and produced a new `q`.
    Quantile { q: f64, q_bar: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub period_index: u64,
    pub disposition: Disposition,
    pub estimate: Option<RateEstimate>,
    pub status: Option<MonitorStatus>,
}

/// Counters over the monitor's lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeriodTally {
    pub observed: u64,
    pub blocked: u64,
    pub off_period: u64,
    pub accepted: u64,
    pub quantiles: u64,
    pub estimates: u64,
}

impl PeriodTally {
    /// Fraction of observed periods that were usable.
    pub fn nonblocked_fraction(&self) -> f64 {
        if self.observed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.observed as f64
        }
    }
}

/// Service-rate heuristic for one queue end.
#[derive(Debug, Clone)]
pub struct RateHeuristic {
    cfg: MonitorConfig,
    period_ns: u64,
    item_size: u64,
    window: SampleWindow,
    gaussian: FilterKernel,
    tracker: ConvergenceTracker,
    tally: PeriodTally,
    horizon_observed: u64,
    horizon_usable: u64,
}

impl RateHeuristic {
    /// `period_ns` is the sampling period `T` (overridden by
    /// `cfg.period_ns` when set), `item_size` is `d` in bytes.
    pub fn new(cfg: MonitorConfig, period_ns: u64, item_size: u64) -> Result<Self> {
        cfg.validate()?;
        let period_ns = cfg.period_ns.unwrap_or(period_ns);
        if period_ns == 0 {
            return Err(Error::InvalidArgument("sampling period must be > 0"));
        }
        if item_size == 0 {
            return Err(Error::InvalidArgument("item size must be >= 1"));
        }
        let gaussian = gaussian_kernel(cfg.gaussian_radius, cfg.normalize_gaussian)?;
        let tracker = ConvergenceTracker::from_config(&cfg)?;
        Ok(Self {
            window: SampleWindow::new(cfg.window)?,
            cfg,
            period_ns,
            item_size,
            gaussian,
            tracker,
            tally: PeriodTally::default(),
            horizon_observed: 0,
            horizon_usable: 0,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn item_size(&self) -> u64 {
        self.item_size
    }

    pub fn tally(&self) -> PeriodTally {
        self.tally
    }

    pub fn tracker(&self) -> &ConvergenceTracker {
        &self.tracker
    }

    pub fn window(&self) -> &SampleWindow {
        &self.window
    }

    fn classify(&self, snap: &TransactionSnapshot) -> Option<Disposition> {
        if snap.blocked(self.cfg.side) {
            return Some(Disposition::Blocked);
        }
        let t = self.period_ns as f64;
        if (snap.realized_period_ns as f64 - t).abs() > self.cfg.epsilon * t {
            return Some(Disposition::OffPeriod);
        }
        None
    }

    /// Processes one sampling period.
    pub fn observe(&mut self, snap: &TransactionSnapshot) -> Step {
        self.tally.observed += 1;
        self.horizon_observed += 1;
        let mut estimate = None;
        let disposition = match self.classify(snap) {
            Some(rejected) => {
                match rejected {
                    Disposition::Blocked => self.tally.blocked += 1,
                    _ => self.tally.off_period += 1,
                }
                rejected
            }
            None => {
                self.tally.accepted += 1;
                self.horizon_usable += 1;
                self.window.push(snap.count(self.cfg.side) as f64);
                if self.window.is_full() {
                    let filtered = self.window.filter(&self.gaussian);
                    let moments = OnlineMoments::from_slice(filtered);
                    let sd = moments.std_dev().unwrap_or(0.0);
                    let q = moments.mean + Z95 * sd;
                    self.tally.quantiles += 1;
                    let converged = self.tracker.check_convergence(q);
                    let q_bar = self.tracker.q_moments().mean;
                    if converged {
                        estimate = Some(self.make_estimate(q_bar, snap));
                        self.tally.estimates += 1;
                        self.tracker
                            .reset_after_convergence()
                            .expect("tracker reported convergence");
                    }
                    Disposition::Quantile { q, q_bar }
                } else {
                    Disposition::Filling
                }
            }
        };
        let status = self.horizon_check(snap.period_index);
        Step {
            period_index: snap.period_index,
            disposition,
            estimate,
            status,
        }
    }

    fn make_estimate(&self, q_bar: f64, snap: &TransactionSnapshot) -> RateEstimate {
        RateEstimate {
            q_bar,
            item_size: self.item_size,
            period_ns: self.period_ns,
            rate_items_per_sec: RateEstimate::items_per_sec(q_bar, self.period_ns),
            rate_bytes_per_sec: RateEstimate::bytes_per_sec(q_bar, self.item_size, self.period_ns),
            n_q: self.tracker.n_q(),
            wall_clock_ns: snap.timestamp_ns,
            phase_index: self.tracker.phase_index(),
            period_index: snap.period_index,
        }
    }

    fn horizon_check(&mut self, period_index: u64) -> Option<MonitorStatus> {
        if self.horizon_observed < self.cfg.reporting_horizon {
            return None;
        }
        let periods = self.horizon_observed;
        let usable = self.horizon_usable;
        self.horizon_observed = 0;
        self.horizon_usable = 0;
        let fraction = usable as f64 / periods as f64;
        (fraction < self.cfg.undeterminable_fraction).then_some(MonitorStatus::Undeterminable {
            period_index,
            periods,
            usable,
            fraction,
        })
    }
}
