//! Synthetic producer/consumer micro-benchmark joined by one instrumented queue.
//!
//! Both kernels are `while` loops that burn a sampled service time per item
//! by spinning on the time reference. The consumer's rate is the quantity the
//! monitor estimates; offline ground truth comes from running the same kernel
//! loop against a pre-filled input and a sink that never blocks.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ratescope_core::ique::{Consumer, IQueue, Producer};
use ratescope_core::monitor::{MonitorConfig, MonitorStatus, PeriodTally, RateEstimate};
use ratescope_core::timebase::{
    calibrate_period, measure_resolution, CalibrationConfig, PeriodCalibration, TimeSource,
};

use crate::clock::{busy_wait_until, tighten_timer_slack, SharedClock};
use crate::error::{Error, Result};
use crate::live::{LiveProbe, Monitor, MonitorEvent};

/// Recorded in every report so runs can be regenerated elsewhere.
pub const RNG_ALGORITHM: &str =
    "ChaCha8 (rand_chacha 0.9, seed_from_u64); exponential by inverse CDF -ln(1-u)/rate, u in [0,1)";

/// Ground truth needs at least this many items.
pub const MIN_TRUTH_ITEMS: u64 = 10_000;

/// Two rates closer than this (relative) cannot be told apart by the
/// dual-phase classifier, and an estimate this close to a truth finds it.
pub const MATCH_TOLERANCE: f64 = 0.20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Deterministic,
    Exponential,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" | "det" => Ok(Self::Deterministic),
            "exponential" | "exp" => Ok(Self::Exponential),
            other => Err(Error::Config(format!("unknown distribution '{other}'"))),
        }
    }
}

/// Independent per-kernel seeds from one run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_item_size() -> u64 {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub distribution: Distribution,
    /// Items per second.
    pub mean_rate: f64,
    #[serde(default = "default_item_size")]
    pub item_size: u64,
    #[serde(default)]
    pub seed: u64,
}

impl ServiceSpec {
    pub fn new(distribution: Distribution, mean_rate: f64, seed: u64) -> Result<Self> {
        let s = Self {
            distribution,
            mean_rate,
            item_size: default_item_size(),
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_rate.is_finite() && self.mean_rate > 0.0) {
            return Err(Error::Config("mean_rate must be positive".into()));
        }
        if self.item_size == 0 {
            return Err(Error::Config("item_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn mean_service_ns(&self) -> f64 {
        1e9 / self.mean_rate
    }

    pub fn service_times(&self) -> ServiceTimes {
        ServiceTimes {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            mean_ns: self.mean_service_ns(),
            distribution: self.distribution,
        }
    }
}

/// Reproducible stream of service times in nanoseconds.
#[derive(Debug, Clone)]
pub struct ServiceTimes {
    rng: ChaCha8Rng,
    mean_ns: f64,
    distribution: Distribution,
}

impl Iterator for ServiceTimes {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        Some(match self.distribution {
            Distribution::Deterministic => self.mean_ns,
            Distribution::Exponential => {
                let u: f64 = self.rng.random();
                -(1.0 - u).ln() * self.mean_ns
            }
        })
    }
}

/// How a kernel burns its service time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    /// Spin on the time reference for each item.
    #[default]
    Spin,
    /// Follow an absolute release schedule, sleeping while ahead of it. Costs
    /// no CPU while idle, so on hosts with fewer cores than kernels the
    /// other kernel is not charged for this one's work. Releases are bursty
    /// at the granularity of the OS timer; no credit accrues while blocked.
    Sleep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub spec: ServiceSpec,
    pub items: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Phase>", into = "Vec<Phase>")]
pub struct PhaseSchedule {
    phases: Vec<Phase>,
}

impl PhaseSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("a schedule needs at least one phase".into()));
        }
        for p in &phases {
            p.spec.validate()?;
            if p.items == 0 {
                return Err(Error::Config("every phase needs at least one item".into()));
            }
        }
        Ok(Self { phases })
    }

    pub fn single(spec: ServiceSpec, items: u64) -> Result<Self> {
        Self::new(vec![Phase { spec, items }])
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total_items(&self) -> u64 {
        self.phases.iter().map(|p| p.items).sum()
    }
}

impl TryFrom<Vec<Phase>> for PhaseSchedule {
    type Error = Error;

    fn try_from(v: Vec<Phase>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhaseSchedule> for Vec<Phase> {
    fn from(s: PhaseSchedule) -> Self {
        s.phases
    }
}

/// Offline measurement of one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub items: u64,
    pub elapsed_ns: u64,
    pub items_per_sec: f64,
    pub bytes_per_sec: f64,
    pub nominal_items_per_sec: f64,
    /// `(measured - nominal) / nominal`; the pacing self-check.
    pub pacing_error: f64,
}

/// Runs the kernel loop over `items` pre-filled inputs into a sink that never
/// blocks and reports the rate it achieved.
pub fn ground_truth_rate<C: TimeSource + ?Sized>(
    spec: &ServiceSpec,
    items: u64,
    clock: &C,
) -> Result<GroundTruth> {
    spec.validate()?;
    if items < MIN_TRUTH_ITEMS {
        return Err(Error::Config(format!(
            "ground truth needs at least {MIN_TRUTH_ITEMS} items, got {items}"
        )));
    }
    let (mut tx, mut rx, _tap) = IQueue::with_item_size::<u64>(items as usize, spec.item_size as usize)?;
    for i in 0..items {
        tx.try_push(i).map_err(|_| Error::Worker("ground-truth prefill overflowed"))?;
    }
    let mut times = spec.service_times();
    let mut sink = 0u64;
    let start = clock.now_ns();
    while let Some(v) = rx.try_pop() {
        let t0 = clock.now_ns();
        busy_wait_until(clock, t0 + times.next().unwrap_or(0.0) as u64);
        sink = sink.wrapping_add(v);
    }
    let elapsed_ns = clock.now_ns() - start;
    std::hint::black_box(sink);
    let items_per_sec = items as f64 * 1e9 / elapsed_ns.max(1) as f64;
    Ok(GroundTruth {
        items,
        elapsed_ns,
        items_per_sec,
        bytes_per_sec: items_per_sec * spec.item_size as f64,
        nominal_items_per_sec: spec.mean_rate,
        pacing_error: (items_per_sec - spec.mean_rate) / spec.mean_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub producer: PhaseSchedule,
    pub consumer: PhaseSchedule,
    pub capacity: usize,
    pub monitor: MonitorConfig,
    pub calibration: CalibrationConfig,
    /// Clock reads used to find the timer floor.
    pub resolution_samples: usize,
    /// When false the counters still run but nobody harvests them.
    pub monitoring: bool,
    #[serde(default)]
    pub producer_pacing: Pacing,
    /// Items per consumer phase for the offline ground truth; 0 skips it.
    pub truth_items: u64,
}

impl BenchConfig {
    pub fn new(producer: PhaseSchedule, consumer: PhaseSchedule) -> Self {
        Self {
            producer,
            consumer,
            capacity: 1 << 14,
            monitor: MonitorConfig::default(),
            calibration: CalibrationConfig {
                ceiling_ns: 1_000_000,
                ..Default::default()
            },
            resolution_samples: 1_000,
            monitoring: true,
            producer_pacing: Pacing::Spin,
            truth_items: 0,
        }
    }

    /// One consumer phase per `(rate, seconds)` pair, fed by a producer at
    /// `producer_rate`. Each phase carries enough items to last its seconds at
    /// the slower of the two rates. `seed` derives every kernel's stream.
    pub fn for_phases(
        distribution: Distribution,
        phases: &[(f64, f64)],
        producer_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut consumer = Vec::with_capacity(phases.len());
        for (i, &(rate, secs)) in phases.iter().enumerate() {
            if !(secs > 0.0) {
                return Err(Error::Config("phase duration must be positive".into()));
            }
            let spec = ServiceSpec::new(distribution, rate, derive_seed(seed, 1 + i as u64))?;
            let items = (rate.min(producer_rate) * secs).ceil() as u64;
            consumer.push(Phase { spec, items });
        }
        let consumer = PhaseSchedule::new(consumer)?;
        let producer = PhaseSchedule::single(
            ServiceSpec::new(distribution, producer_rate, derive_seed(seed, 0))?,
            consumer.total_items(),
        )?;
        Ok(Self::new(producer, consumer))
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be >= 1".into()));
        }
        if self.producer.total_items() != self.consumer.total_items() {
            return Err(Error::Config(format!(
                "producer sends {} items but consumer expects {}",
                self.producer.total_items(),
                self.consumer.total_items()
            )));
        }
        self.monitor.validate()?;
        self.calibration.validate()?;
        Ok(())
    }

    /// `λ/μ` per consumer phase: producer nominal rate over consumer nominal
    /// rate, clamped to `(0, 1]`.
    pub fn rho_per_phase(&self) -> Vec<f64> {
        let lambda = self.producer.phases()[0].spec.mean_rate;
        self.consumer
            .phases()
            .iter()
            .map(|p| (lambda / p.spec.mean_rate).clamp(f64::MIN_POSITIVE, 1.0))
            .collect()
    }

    /// The least-utilized phase decides the bucket.
    pub fn rho(&self) -> f64 {
        self.rho_per_phase().into_iter().fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseClass {
    Neither,
    A,
    B,
    Both,
}

impl PhaseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Neither => "neither",
            Self::A => "a",
            Self::B => "b",
            Self::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub class: PhaseClass,
    /// Set when the two truths are themselves within the match tolerance.
    pub unreliable: bool,
}

fn within_tolerance(observed: f64, truth: f64) -> bool {
    ((observed - truth) / truth).abs() <= MATCH_TOLERANCE
}

/// Phase A (B) is found when any estimate lies within 20% of its truth.
pub fn classify_dual_phase(estimates: &[f64], truth_a: f64, truth_b: f64) -> Result<Classification> {
    if !(truth_a > 0.0 && truth_b > 0.0) {
        return Err(Error::Config("truth rates must be positive".into()));
    }
    let a = estimates.iter().any(|&e| within_tolerance(e, truth_a));
    let b = estimates.iter().any(|&e| within_tolerance(e, truth_b));
    let class = match (a, b) {
        (false, false) => PhaseClass::Neither,
        (true, false) => PhaseClass::A,
        (false, true) => PhaseClass::B,
        (true, true) => PhaseClass::Both,
    };
    let unreliable = within_tolerance(truth_a, truth_b) || within_tolerance(truth_b, truth_a);
    Ok(Classification { class, unreliable })
}

/// Signed percent difference `((observed - set) / set) * 100`.
pub fn percent_difference(observed: f64, set: f64) -> f64 {
    (observed - set) / set * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rng_algorithm: String,
    pub rho: f64,
    pub rho_per_phase: Vec<f64>,
    /// Offline truth per consumer phase, when requested.
    pub ground_truth: Vec<GroundTruth>,
    pub calibration: Option<PeriodCalibration>,
    /// False when monitoring was requested but calibration was unstable.
    pub usable: bool,
    pub estimates: Vec<RateEstimate>,
    pub statuses: Vec<MonitorStatus>,
    pub tally: Option<PeriodTally>,
    pub nonblocked_fraction: Option<f64>,
    pub items_consumed: u64,
    pub in_order: bool,
    pub wall_time_ns: u64,
    pub achieved_items_per_sec: f64,
    pub classification: Option<Classification>,
}

impl BenchReport {
    /// The last converged estimate, in items per second.
    pub fn final_estimate(&self) -> Option<f64> {
        self.estimates.last().map(|e| e.rate_items_per_sec)
    }
}

fn push_blocking(tx: &mut Producer<u64>, mut item: u64) -> bool {
    let mut blocked = false;
    while let Err(back) = tx.try_push(item) {
        item = back;
        blocked = true;
        thread::yield_now();
    }
    blocked
}

fn producer_loop(schedule: &PhaseSchedule, pacing: Pacing, mut tx: Producer<u64>, clock: &dyn TimeSource) {
    let mut seq = 0u64;
    let mut due = clock.now_ns() as f64;
    for phase in schedule.phases() {
        let mut times = phase.spec.service_times();
        for _ in 0..phase.items {
            let svc = times.next().unwrap_or(0.0);
            match pacing {
                Pacing::Spin => {
                    let t0 = clock.now_ns();
                    busy_wait_until(clock, t0 + svc as u64);
                    push_blocking(&mut tx, seq);
                }
                Pacing::Sleep => {
                    due += svc;
                    if clock.now_ns() < due as u64 {
                        clock.sleep_until(due as u64);
                    }
                    if push_blocking(&mut tx, seq) {
                        due = due.max(clock.now_ns() as f64);
                    }
                }
            }
            seq += 1;
        }
    }
}

fn consumer_loop(
    schedule: &PhaseSchedule,
    mut rx: Consumer<u64>,
    clock: &dyn TimeSource,
) -> (u64, bool) {
    let mut expected = 0u64;
    let mut in_order = true;
    for phase in schedule.phases() {
        let mut times = phase.spec.service_times();
        for _ in 0..phase.items {
            let v = loop {
                match rx.try_pop() {
                    Some(v) => break v,
                    None => thread::yield_now(),
                }
            };
            in_order &= v == expected;
            expected += 1;
            let t0 = clock.now_ns();
            busy_wait_until(clock, t0 + times.next().unwrap_or(0.0) as u64);
        }
    }
    (expected, in_order)
}

struct MonitorOutcome {
    calibration: Option<PeriodCalibration>,
    usable: bool,
    estimates: Vec<RateEstimate>,
    statuses: Vec<MonitorStatus>,
    tally: Option<PeriodTally>,
}

/// Runs one benchmark; every event the monitor produces is also passed to
/// `sink` in order.
pub fn run_benchmark_with(
    cfg: &BenchConfig,
    clock: SharedClock,
    sink: impl FnMut(MonitorEvent) + Send,
) -> Result<BenchReport> {
    cfg.validate()?;
    let item_size = cfg.consumer.phases()[0].spec.item_size;
    let mut ground_truth = Vec::new();
    if cfg.truth_items > 0 {
        for p in cfg.consumer.phases() {
            ground_truth.push(ground_truth_rate(&p.spec, cfg.truth_items, &*clock)?);
        }
    }

    let (tx, rx, tap) = IQueue::with_item_size::<u64>(cfg.capacity, item_size as usize)?;
    let stop = AtomicBool::new(false);
    let sink = Mutex::new(sink);

    let (wall_time_ns, consumed, produced, monitor) = thread::scope(|s| {
        let monitor = cfg.monitoring.then(|| {
            let (tap, clock, stop, sink) = (&tap, &*clock, &stop, &sink);
            thread::Builder::new()
                .name("ratescope-monitor".into())
                .spawn_scoped(s, move || -> Result<MonitorOutcome> {
                    tighten_timer_slack();
                    let tref = measure_resolution(clock, cfg.resolution_samples)?;
                    let cal = {
                        let mut probe = LiveProbe::new(tap, clock, cfg.monitor.side);
                        calibrate_period(&tref, &mut probe, &cfg.calibration)?
                    };
                    let mut monitor = match Monitor::new(cfg.monitor.clone(), &cal, item_size) {
                        Ok(m) => m,
                        Err(Error::UnstableCalibration) => {
                            return Ok(MonitorOutcome {
                                calibration: Some(cal),
                                usable: false,
                                estimates: vec![],
                                statuses: vec![],
                                tally: None,
                            })
                        }
                        Err(e) => return Err(e),
                    };
                    let mut estimates = Vec::new();
                    let mut statuses = Vec::new();
                    let mut sink = sink.lock().expect("sink poisoned");
                    let tally = monitor.run(tap, clock, stop, |e| {
                        match &e {
                            MonitorEvent::Estimate(r) => estimates.push(*r),
                            MonitorEvent::Status(st) => statuses.push(*st),
                            _ => {}
                        }
                        (*sink)(e);
                    });
                    Ok(MonitorOutcome {
                        calibration: Some(cal),
                        usable: true,
                        estimates,
                        statuses,
                        tally: Some(tally),
                    })
                })
                .expect("spawn monitor thread")
        });
        let start = clock.now_ns();
        let producer = thread::Builder::new()
            .name("ratescope-producer".into())
            .spawn_scoped(s, || producer_loop(&cfg.producer, cfg.producer_pacing, tx, &*clock))
            .expect("spawn producer thread");
        let consumer = thread::Builder::new()
            .name("ratescope-consumer".into())
            .spawn_scoped(s, || consumer_loop(&cfg.consumer, rx, &*clock))
            .expect("spawn consumer thread");
        let consumed = consumer.join();
        let wall = clock.now_ns() - start;
        stop.store(true, Ordering::Release);
        let produced = producer.join();
        let monitor = monitor.map(|m| m.join());
        (wall, consumed, produced, monitor)
    });
    produced.map_err(|_| Error::Worker("producer"))?;
    let (items_consumed, in_order) = consumed.map_err(|_| Error::Worker("consumer"))?;
    let monitor = match monitor {
        Some(m) => Some(m.map_err(|_| Error::Worker("monitor"))??),
        None => None,
    };

    let (calibration, usable, estimates, statuses, tally) = match monitor {
        Some(m) => (m.calibration, m.usable, m.estimates, m.statuses, m.tally),
        None => (None, true, vec![], vec![], None),
    };
    let classification = match ground_truth.as_slice() {
        [a, b] => Some(classify_dual_phase(
            &estimates.iter().map(|e| e.rate_items_per_sec).collect::<Vec<_>>(),
            a.items_per_sec,
            b.items_per_sec,
        )?),
        _ => None,
    };
    Ok(BenchReport {
        config: cfg.clone(),
        rng_algorithm: RNG_ALGORITHM.into(),
        rho: cfg.rho(),
        rho_per_phase: cfg.rho_per_phase(),
        ground_truth,
        calibration,
        usable,
        nonblocked_fraction: tally.map(|t| t.nonblocked_fraction()),
        estimates,
        statuses,
        tally,
        items_consumed,
        in_order,
        wall_time_ns,
        achieved_items_per_sec: items_consumed as f64 * 1e9 / wall_time_ns.max(1) as f64,
        classification,
    })
}

pub fn run_benchmark(cfg: &BenchConfig, clock: SharedClock) -> Result<BenchReport> {
    run_benchmark_with(cfg, clock, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::PlatformClock;

    #[test]
    fn classify_examples() {
        let c = classify_dual_phase(&[2.6, 1.02], 2.66, 1.0).unwrap();
        assert_eq!(c.class, PhaseClass::Both);
        assert!(!c.unreliable);
        assert_eq!(classify_dual_phase(&[], 2.66, 1.0).unwrap().class, PhaseClass::Neither);
        assert!(classify_dual_phase(&[1.0], 1.0, 1.1).unwrap().unreliable);
        assert_eq!(classify_dual_phase(&[1.05], 2.66, 1.0).unwrap().class, PhaseClass::B);
        assert!(classify_dual_phase(&[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn percent_difference_is_signed() {
        assert_eq!(percent_difference(120.0, 100.0), 20.0);
        assert_eq!(percent_difference(80.0, 100.0), -20.0);
    }

    #[test]
    fn schedules_reject_empty_phases() {
        let spec = ServiceSpec::new(Distribution::Deterministic, 1e5, 0).unwrap();
        assert!(PhaseSchedule::new(vec![]).is_err());
        assert!(PhaseSchedule::single(spec, 0).is_err());
        assert!(ServiceSpec::new(Distribution::Exponential, 0.0, 0).is_err());
        let s = PhaseSchedule::new(vec![Phase { spec, items: 3 }, Phase { spec, items: 4 }]).unwrap();
        assert_eq!(s.total_items(), 7);
    }

    #[test]
    fn ground_truth_rejects_small_runs() {
        let spec = ServiceSpec::new(Distribution::Deterministic, 1e5, 0).unwrap();
        assert!(ground_truth_rate(&spec, 10, &PlatformClock::new()).is_err());
    }
}
