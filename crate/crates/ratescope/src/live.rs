//! Monitor thread: periodic harvesting against a real (or virtual) clock.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use ratescope_core::ique::{QueueTap, Side, TransactionSnapshot};
use ratescope_core::monitor::{
    Disposition, MonitorConfig, MonitorStatus, PeriodTally, RateEstimate, RateHeuristic,
};
use ratescope_core::timebase::{BlockageProbe, PeriodCalibration, ProbeRecord, TimeSource};

use crate::clock::tighten_timer_slack;
use crate::error::{Error, Result};

/// Calibration probe that sleeps one period, then harvests the monitored end.
pub struct LiveProbe<'a, T, C: TimeSource + ?Sized> {
    tap: &'a QueueTap<T>,
    clock: &'a C,
    side: Side,
    last_ns: u64,
}

impl<'a, T, C: TimeSource + ?Sized> LiveProbe<'a, T, C> {
    pub fn new(tap: &'a QueueTap<T>, clock: &'a C, side: Side) -> Self {
        tap.harvest(Side::Head);
        tap.harvest(Side::Tail);
        Self {
            tap,
            clock,
            side,
            last_ns: clock.now_ns(),
        }
    }
}

impl<T, C: TimeSource + ?Sized> BlockageProbe for LiveProbe<'_, T, C> {
    fn run_period(&mut self, requested_ns: u64) -> ProbeRecord {
        self.clock.sleep_until(self.last_ns + requested_ns);
        let now = self.clock.now_ns();
        let h = self.tap.harvest(self.side);
        let realized_ns = now - self.last_ns;
        self.last_ns = now;
        ProbeRecord {
            requested_ns,
            realized_ns,
            blocked: h.blocked,
        }
    }
}

/// Everything the monitor produces, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum MonitorEvent {
    Snapshot(TransactionSnapshot),
    Quantile {
        period_index: u64,
        timestamp_ns: u64,
        q: f64,
        q_bar: f64,
    },
    Estimate(RateEstimate),
    Status(MonitorStatus),
}

/// Feeds one snapshot through the heuristic and reports the resulting events.
pub fn process_snapshot(
    heuristic: &mut RateHeuristic,
    snap: &TransactionSnapshot,
    sink: &mut impl FnMut(MonitorEvent),
) {
    sink(MonitorEvent::Snapshot(*snap));
    let step = heuristic.observe(snap);
    if let Disposition::Quantile { q, q_bar } = step.disposition {
        sink(MonitorEvent::Quantile {
            period_index: step.period_index,
            timestamp_ns: snap.timestamp_ns,
            q,
            q_bar,
        });
    }
    if let Some(e) = step.estimate {
        sink(MonitorEvent::Estimate(e));
    }
    if let Some(s) = step.status {
        sink(MonitorEvent::Status(s));
    }
}

/// Drives a [`RateHeuristic`] from a queue tap, one harvest per period.
pub struct Monitor {
    heuristic: RateHeuristic,
}

impl Monitor {
    /// Refuses to start on an unstable calibration unless the configuration
    /// pins the period.
    pub fn new(cfg: MonitorConfig, cal: &PeriodCalibration, item_size: u64) -> Result<Self> {
        if !cal.stable && cfg.period_ns.is_none() {
            return Err(Error::UnstableCalibration);
        }
        Ok(Self {
            heuristic: RateHeuristic::new(cfg, cal.period_ns, item_size)?,
        })
    }

    pub fn with_period(cfg: MonitorConfig, period_ns: u64, item_size: u64) -> Result<Self> {
        Ok(Self {
            heuristic: RateHeuristic::new(cfg, period_ns, item_size)?,
        })
    }

    pub fn period_ns(&self) -> u64 {
        self.heuristic.period_ns()
    }

    pub fn heuristic(&self) -> &RateHeuristic {
        &self.heuristic
    }

    /// Runs until `stop` is set, checking it once per period.
    ///
    /// Deadlines follow a fixed grid `start + n·T`; if the thread wakes more
    /// than a period late the grid is re-anchored rather than replaying
    /// missed periods back to back.
    pub fn run<T, C: TimeSource + ?Sized>(
        &mut self,
        tap: &QueueTap<T>,
        clock: &C,
        stop: &AtomicBool,
        mut sink: impl FnMut(MonitorEvent),
    ) -> PeriodTally {
        let period = self.heuristic.period_ns();
        tap.harvest(Side::Head);
        tap.harvest(Side::Tail);
        let mut last = clock.now_ns();
        let mut deadline = last + period;
        let mut index = 0u64;
        while !stop.load(Ordering::Acquire) {
            clock.sleep_until(deadline);
            let now = clock.now_ns();
            let snap = tap.snapshot(index, now - last, now);
            last = now;
            index += 1;
            deadline += period;
            if deadline <= now {
                deadline = now + period;
            }
            process_snapshot(&mut self.heuristic, &snap, &mut sink);
        }
        self.heuristic.tally()
    }
}

/// Runs `monitor` on its own thread until `stop` is set.
pub fn spawn_monitor<T, C>(
    mut monitor: Monitor,
    tap: QueueTap<T>,
    clock: Arc<C>,
    stop: Arc<AtomicBool>,
    mut sink: impl FnMut(MonitorEvent) + Send + 'static,
) -> JoinHandle<PeriodTally>
where
    T: Send + 'static,
    C: TimeSource + Send + Sync + ?Sized + 'static,
{
    thread::Builder::new()
        .name("ratescope-monitor".into())
        .spawn(move || {
            tighten_timer_slack();
            monitor.run(&tap, &*clock, &stop, &mut sink)
        })
        .expect("spawn monitor thread")
}
