//! Time reference, read-latency measurement, and sampling-period calibration.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result};

/// A monotonic nanosecond clock.
///
/// `sleep_until` defaults to spinning on `now_ns`; platform clocks override it
/// with an OS sleep and virtual clocks jump straight to the deadline.
pub trait TimeSource {
    fn now_ns(&self) -> u64;

    fn sleep_until(&self, deadline_ns: u64) {
        while self.now_ns() < deadline_ns {
            core::hint::spin_loop();
        }
    }
}

impl<C: TimeSource + ?Sized> TimeSource for &C {
    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }

    fn sleep_until(&self, deadline_ns: u64) {
        (**self).sleep_until(deadline_ns)
    }
}

impl<C: TimeSource + ?Sized> TimeSource for alloc::boxed::Box<C> {
    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }

    fn sleep_until(&self, deadline_ns: u64) {
        (**self).sleep_until(deadline_ns)
    }
}

impl<C: TimeSource + ?Sized> TimeSource for alloc::sync::Arc<C> {
    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }

    fn sleep_until(&self, deadline_ns: u64) {
        (**self).sleep_until(deadline_ns)
    }
}

/// Deterministic clock: every read advances time by a fixed step, and sleeps
/// jump forward to their deadline.
#[derive(Debug)]
pub struct VirtualClock {
    now: AtomicU64,
    step_ns: u64,
}

impl VirtualClock {
    pub const fn new(start_ns: u64, step_ns: u64) -> Self {
        Self {
            now: AtomicU64::new(start_ns),
            step_ns,
        }
    }

    pub fn advance(&self, ns: u64) {
        self.now.fetch_add(ns, Ordering::SeqCst);
    }

    pub fn peek(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

impl TimeSource for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.now.fetch_add(self.step_ns, Ordering::SeqCst) + self.step_ns
    }

    fn sleep_until(&self, deadline_ns: u64) {
        self.now.fetch_max(deadline_ns, Ordering::SeqCst);
    }
}

/// Back-to-back read latency of a time source.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Resolution {
    pub min_ns: u64,
    pub mean_ns: f64,
    pub p95_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeRef {
    pub resolution: Resolution,
    pub origin_ns: u64,
}

impl TimeRef {
    /// Smallest usable sampling period.
    pub fn floor_ns(&self) -> u64 {
        self.resolution.min_ns
    }
}

const MIN_RESOLUTION_SAMPLES: usize = 100;
/// Reads allowed while waiting for a coarse clock to tick.
const MAX_TICK_WAIT: u32 = 1 << 20;

/// Measures the latency between successive distinct readings of `clock`
/// over `samples` read pairs.
///
/// A pair whose second read equals the first is re-read until the clock
/// ticks, so coarse clocks report their tick size rather than zero.
pub fn measure_resolution<C: TimeSource + ?Sized>(clock: &C, samples: usize) -> Result<TimeRef> {
    if samples < MIN_RESOLUTION_SAMPLES {
        return Err(Error::InvalidArgument("resolution measurement needs >= 100 samples"));
    }
    let origin_ns = clock.now_ns();
    let mut deltas = Vec::with_capacity(samples);
    for _ in 0..samples {
        let first = clock.now_ns();
        let mut second = clock.now_ns();
        let mut spins = 0;
        while second == first && spins < MAX_TICK_WAIT {
            second = clock.now_ns();
            spins += 1;
        }
        if second < first {
            return Err(Error::NonMonotonicClock {
                previous_ns: first,
                next_ns: second,
            });
        }
        if second == first {
            return Err(Error::InvalidArgument("time source does not advance"));
        }
        deltas.push(second - first);
    }
    deltas.sort_unstable();
    let mean_ns = deltas.iter().map(|&d| d as f64).sum::<f64>() / samples as f64;
    // nearest-rank percentile
    let rank = libm::ceil(0.95 * samples as f64) as usize;
    let p95_ns = deltas[rank.clamp(1, samples) - 1];
    Ok(TimeRef {
        resolution: Resolution {
            min_ns: deltas[0],
            mean_ns,
            p95_ns,
        },
        origin_ns,
    })
}

/// One probed period: what was asked for, what elapsed, and whether the
/// monitored stage blocked during it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeRecord {
    pub requested_ns: u64,
    pub realized_ns: u64,
    pub blocked: bool,
}

/// Runs one sampling period of the requested length against the live system.
pub trait BlockageProbe {
    fn run_period(&mut self, requested_ns: u64) -> ProbeRecord;
}

impl<P: BlockageProbe + ?Sized> BlockageProbe for &mut P {
    fn run_period(&mut self, requested_ns: u64) -> ProbeRecord {
        (**self).run_period(requested_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CalibrationConfig {
    /// Periods that must pass without blockage.
    pub k: usize,
    /// Periods whose realized length must stay within `epsilon * T`.
    pub j: usize,
    pub epsilon: f64,
    pub ceiling_ns: u64,
    /// Period budget per candidate T before giving up on it. Clamped up to
    /// `max(k, j)`.
    pub max_periods_per_step: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            k: 16,
            j: 16,
            epsilon: 0.05,
            ceiling_ns: 100_000_000,
            max_periods_per_step: 64,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.j == 0 {
            return Err(Error::InvalidArgument("k and j must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument("epsilon must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PeriodCalibration {
    pub floor_ns: u64,
    /// Chosen sampling period. Equal to the floor when unstable.
    pub period_ns: u64,
    pub multiple: u64,
    pub stable: bool,
    pub history: Vec<ProbeRecord>,
}

/// Outcome of probing one candidate period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepOutcome {
    Passed,
    Unstable,
    Blocked,
}

fn within(record: &ProbeRecord, epsilon: f64) -> bool {
    let t = record.requested_ns as f64;
    (record.realized_ns as f64 - t).abs() <= epsilon * t
}

fn probe_step<P: BlockageProbe + ?Sized>(
    probe: &mut P,
    period_ns: u64,
    cfg: &CalibrationConfig,
    history: &mut Vec<ProbeRecord>,
) -> StepOutcome {
    let need = cfg.k.max(cfg.j);
    let budget = cfg.max_periods_per_step.max(need);
    // run lengths of trailing non-blocked / in-tolerance periods
    let mut clear_run = 0usize;
    let mut stable_run = 0usize;
    for _ in 0..budget {
        let rec = probe.run_period(period_ns);
        history.push(rec);
        clear_run = if rec.blocked { 0 } else { clear_run + 1 };
        stable_run = if within(&rec, cfg.epsilon) {
            stable_run + 1
        } else {
            0
        };
        if clear_run >= cfg.k && stable_run >= cfg.j {
            return StepOutcome::Passed;
        }
    }
    if clear_run < cfg.k {
        StepOutcome::Blocked
    } else {
        StepOutcome::Unstable
    }
}

/// Finds the widest stable sampling period on the schedule
/// `floor * {1, 2, 4, ...}` up to `cfg.ceiling_ns`.
///
/// Each candidate T is run until the last `k` periods were free of blockage
/// and the last `j` realized periods were within `epsilon * T`, or until the
/// per-step budget runs out. A candidate that fails only on timing is skipped
/// (short periods are dominated by timer noise); a candidate that fails on
/// blockage ends the search. The result is the widest passing T seen before
/// the search ended, or `stable = false` if none passed.
pub fn calibrate_period<P: BlockageProbe + ?Sized>(
    time_ref: &TimeRef,
    probe: &mut P,
    cfg: &CalibrationConfig,
) -> Result<PeriodCalibration> {
    cfg.validate()?;
    let floor_ns = time_ref.floor_ns();
    if floor_ns == 0 {
        return Err(Error::InvalidArgument("resolution floor must be > 0"));
    }
    let mut history = Vec::new();
    let mut best: Option<u64> = None;
    let mut multiple = 1u64;
    loop {
        let Some(period_ns) = floor_ns.checked_mul(multiple) else {
            break;
        };
        if period_ns > cfg.ceiling_ns.max(floor_ns) {
            break;
        }
        match probe_step(probe, period_ns, cfg, &mut history) {
            StepOutcome::Passed => best = Some(multiple),
            StepOutcome::Unstable => {}
            StepOutcome::Blocked => break,
        }
        multiple = match multiple.checked_mul(2) {
            Some(m) => m,
            None => break,
        };
    }
    let (stable, multiple) = match best {
        Some(m) => (true, m),
        None => (false, 1),
    };
    Ok(PeriodCalibration {
        floor_ns,
        period_ns: floor_ns * multiple,
        multiple,
        stable,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tref(floor: u64) -> TimeRef {
        TimeRef {
            resolution: Resolution {
                min_ns: floor,
                mean_ns: floor as f64,
                p95_ns: floor,
            },
            origin_ns: 0,
        }
    }

    struct Ideal;
    impl BlockageProbe for Ideal {
        fn run_period(&mut self, requested_ns: u64) -> ProbeRecord {
            ProbeRecord {
                requested_ns,
                realized_ns: requested_ns,
                blocked: false,
            }
        }
    }

    struct AlwaysBlocked;
    impl BlockageProbe for AlwaysBlocked {
        fn run_period(&mut self, requested_ns: u64) -> ProbeRecord {
            ProbeRecord {
                requested_ns,
                realized_ns: requested_ns,
                blocked: true,
            }
        }
    }

    #[test]
    fn virtual_clock_resolution() {
        let clock = VirtualClock::new(0, 50);
        let tr = measure_resolution(&clock, 100).unwrap();
        assert_eq!(tr.resolution.min_ns, 50);
        assert_eq!(tr.resolution.mean_ns, 50.0);
        assert_eq!(tr.resolution.p95_ns, 50);
    }

    #[test]
    fn too_few_samples() {
        let clock = VirtualClock::new(0, 50);
        assert!(matches!(
            measure_resolution(&clock, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn backwards_clock_is_fatal() {
        struct Backwards(AtomicU64);
        impl TimeSource for Backwards {
            fn now_ns(&self) -> u64 {
                self.0.fetch_sub(10, Ordering::SeqCst)
            }
        }
        let clock = Backwards(AtomicU64::new(1_000_000));
        assert!(matches!(
            measure_resolution(&clock, 100),
            Err(Error::NonMonotonicClock { .. })
        ));
    }

    #[test]
    fn virtual_sleep_jumps_to_deadline() {
        let clock = VirtualClock::new(0, 1);
        clock.sleep_until(1_000);
        assert_eq!(clock.peek(), 1_000);
        clock.sleep_until(10);
        assert_eq!(clock.peek(), 1_000);
    }

    #[test]
    fn ideal_probe_reaches_ceiling() {
        let cfg = CalibrationConfig {
            ceiling_ns: 100 << 10,
            ..Default::default()
        };
        let cal = calibrate_period(&tref(100), &mut Ideal, &cfg).unwrap();
        assert!(cal.stable);
        assert_eq!(cal.period_ns, 100 << 10);
        assert_eq!(cal.multiple, 1 << 10);
        // 11 candidates, each passing after max(k, j) periods
        assert_eq!(cal.history.len(), 11 * 16);
    }

    #[test]
    fn ceiling_between_schedule_points() {
        let cfg = CalibrationConfig {
            ceiling_ns: 1_000,
            ..Default::default()
        };
        let cal = calibrate_period(&tref(100), &mut Ideal, &cfg).unwrap();
        assert_eq!(cal.period_ns, 800);
    }

    #[test]
    fn always_blocked_is_unstable() {
        let cal =
            calibrate_period(&tref(100), &mut AlwaysBlocked, &CalibrationConfig::default())
                .unwrap();
        assert!(!cal.stable);
        assert_eq!(cal.period_ns, 100);
        assert_eq!(cal.history.len(), 64);
    }

    #[test]
    fn invalid_parameters() {
        let bad = [
            CalibrationConfig { k: 0, ..Default::default() },
            CalibrationConfig { j: 0, ..Default::default() },
            CalibrationConfig { epsilon: 1.0, ..Default::default() },
            CalibrationConfig { epsilon: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(calibrate_period(&tref(100), &mut Ideal, &cfg).is_err());
        }
    }

    #[test]
    fn zero_epsilon_needs_exact_periods() {
        let cfg = CalibrationConfig {
            epsilon: 0.0,
            ceiling_ns: 1_000,
            ..Default::default()
        };
        assert!(calibrate_period(&tref(100), &mut Ideal, &cfg).unwrap().stable);

        struct OffByOne;
        impl BlockageProbe for OffByOne {
            fn run_period(&mut self, requested_ns: u64) -> ProbeRecord {
                ProbeRecord {
                    requested_ns,
                    realized_ns: requested_ns + 1,
                    blocked: false,
                }
            }
        }
        assert!(!calibrate_period(&tref(100), &mut OffByOne, &cfg).unwrap().stable);
    }
}
