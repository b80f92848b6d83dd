use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ratescope::clock::{ClockKind, SharedClock};
use ratescope::live::{LiveProbe, MonitorEvent};
use ratescope::overhead::measure_overhead;
use ratescope::trace::{self, TraceRecord};
use ratescope::workload::{
    percent_difference, run_benchmark_with, BenchConfig, BenchReport, Distribution, Pacing,
};
use ratescope_core::ique::{IQueue, Side};
use ratescope_core::monitor::MonitorConfig;
use ratescope_core::qmodel::{pr_nonblocking_read, pr_nonblocking_write, ObservationScenario};
use ratescope_core::timebase::{calibrate_period, measure_resolution, CalibrationConfig};

/// Utilization at or above this counts as "high" in bench summaries.
const HIGH_RHO: f64 = 0.7;

#[derive(Parser)]
#[command(name = "ratescope", version, about = "Online service-rate estimation for bounded queues")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed; repeat i uses seed + i.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// JSON file with monitor settings (same fields as the monitor config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Deterministic,
    Exponential,
}

impl From<DistArg> for Distribution {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Deterministic => Distribution::Deterministic,
            DistArg::Exponential => Distribution::Exponential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PacingArg {
    Spin,
    Sleep,
}

impl From<PacingArg> for Pacing {
    fn from(p: PacingArg) -> Self {
        match p {
            PacingArg::Spin => Pacing::Spin,
            PacingArg::Sleep => Pacing::Sleep,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Find the widest stable sampling period on this host.
    Calibrate(CalibrateArgs),
    /// Run seeded producer/consumer benchmarks under the monitor.
    Bench(BenchArgs),
    /// Compare wall time with and without monitoring.
    Overhead(OverheadArgs),
    /// Recompute q, q-bar and estimates from a recorded trace.
    Replay(ReplayArgs),
    /// Tabulate the observation probabilities of the M/M/1 model.
    Model(ModelArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Clock reads used to measure the timer floor.
    #[arg(long)]
    samples: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 100_000_000)]
    ceiling_ns: u64,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    j: usize,
    #[arg(long, default_value_t = 64)]
    max_periods: usize,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, value_enum, default_value = "deterministic")]
    dist: DistArg,
    /// Producer rate, items/s [default: 10x the fastest consumer phase].
    #[arg(long)]
    producer_rate: Option<f64>,
    #[arg(long, value_enum, default_value = "spin")]
    producer_pacing: PacingArg,
    /// Seconds per consumer phase.
    #[arg(long, default_value_t = 5.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 1 << 14)]
    capacity: usize,
    /// Largest calibration candidate period.
    #[arg(long, default_value_t = 1_000_000)]
    ceiling_ns: u64,
    /// Skip calibration and sample at this period.
    #[arg(long)]
    period_ns: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Consumer rate, items/s.
    #[arg(long, required_unless_present = "dual_phase", conflicts_with = "dual_phase")]
    consumer_rate: Option<f64>,
    /// Two consumer phases `A,B` in items/s, switched halfway by item count.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    dual_phase: Option<Vec<f64>>,
    /// Sweep consumer rates log-evenly from --consumer-rate to this over the repeats.
    #[arg(long, requires = "consumer_rate")]
    sweep_to: Option<f64>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    /// Items per consumer phase for the offline ground truth; 0 skips it.
    #[arg(long, default_value_t = 20_000)]
    truth_items: u64,
    /// Run without a monitor (counters still tick).
    #[arg(long)]
    no_monitor: bool,
    /// Also write the full monitor trace (JSON lines) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the summary CSV here.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Run repeats concurrently instead of one after another.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long, default_value_t = 1e5)]
    consumer_rate: f64,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Runs per arm.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    /// Leave monitoring off in both arms.
    #[arg(long)]
    control: bool,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Exit 1 unless the recomputed records equal the recorded ones.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Service rate, items/s.
    #[arg(long)]
    mu: f64,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    capacity: Vec<u64>,
    /// Sampling periods, seconds.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    period_s: Vec<f64>,
}

/// Failure that has already been reported on stdout/out and only needs the
/// exit status.
#[derive(Debug)]
struct Reported;

impl std::fmt::Display for Reported {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("reported")
    }
}

impl std::error::Error for Reported {}

/// Bad environment or configuration file; exits like a bad flag.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Reported>() => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let clock = ClockKind::from_env().map_err(|e| Usage(e.into()))?.build();
    let monitor = match &cli.common.config {
        Some(p) => load_monitor_config(p).map_err(Usage)?,
        None => MonitorConfig::default(),
    };
    let common = &cli.common;
    match cli.command {
        Command::Calibrate(a) => calibrate(common, a, &clock),
        Command::Bench(a) => bench(common, a, monitor, &clock),
        Command::Overhead(a) => overhead(common, a, monitor, &clock),
        Command::Replay(a) => replay(common, a),
        Command::Model(a) => model(common, a),
    }
}

fn load_monitor_config(path: &Path) -> anyhow::Result<MonitorConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: MonitorConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate().with_context(|| format!("checking {}", path.display()))?;
    Ok(cfg)
}

fn open_out(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn calibrate(common: &Common, a: CalibrateArgs, clock: &SharedClock) -> anyhow::Result<()> {
    let cfg = CalibrationConfig {
        k: a.k,
        j: a.j,
        epsilon: a.epsilon,
        ceiling_ns: a.ceiling_ns,
        max_periods_per_step: a.max_periods,
    };
    cfg.validate()?;
    let tref = measure_resolution(&**clock, a.samples)?;
    let (_tx, _rx, tap) = IQueue::new::<u64>(1)?;
    let mut probe = LiveProbe::new(&tap, &**clock, Side::Head);
    let cal = calibrate_period(&tref, &mut probe, &cfg)?;
    let mut w = open_out(&common.out)?;
    match common.format.unwrap_or(Format::Json) {
        Format::Json => {
            let v = json!({
                "floor_ns": cal.floor_ns,
                "chosen_T_ns": cal.period_ns,
                "multiple": cal.multiple,
                "stable": cal.stable,
                "resolution": tref.resolution,
                "history": cal.history,
            });
            serde_json::to_writer_pretty(&mut w, &v)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "requested_ns,realized_ns,blocked")?;
            for r in &cal.history {
                writeln!(w, "{},{},{}", r.requested_ns, r.realized_ns, r.blocked)?;
            }
        }
    }
    w.flush()?;
    if !cal.stable {
        eprintln!("calibration unstable: no candidate period passed");
        return Err(Reported.into());
    }
    Ok(())
}

fn workload_config(
    w: &WorkloadArgs,
    phases_rates: &[f64],
    monitor: &MonitorConfig,
    seed: u64,
) -> anyhow::Result<BenchConfig> {
    let fastest = phases_rates.iter().copied().fold(0.0, f64::max);
    let producer_rate = w.producer_rate.unwrap_or(10.0 * fastest);
    let phases: Vec<(f64, f64)> = phases_rates.iter().map(|&r| (r, w.duration_s)).collect();
    let mut cfg = BenchConfig::for_phases(w.dist.into(), &phases, producer_rate, seed)?;
    cfg.capacity = w.capacity;
    cfg.producer_pacing = w.producer_pacing.into();
    cfg.calibration.ceiling_ns = w.ceiling_ns;
    cfg.monitor = monitor.clone();
    if w.period_ns.is_some() {
        cfg.monitor.period_ns = w.period_ns;
    }
    Ok(cfg)
}

fn sweep_rate(from: f64, to: f64, i: u32, n: u32) -> f64 {
    if n <= 1 {
        return from;
    }
    from * (to / from).powf(i as f64 / (n - 1) as f64)
}

const SUMMARY_HEADER: &str = "run,seed,set_rate_a,set_rate_b,truth_a,truth_b,estimate,pct_diff_set,pct_diff_truth,\
estimates,classification,unreliable,rho,rho_bucket,usable,nonblocked_fraction,wall_time_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn summary_row(run: u32, seed: u64, r: &BenchReport) -> String {
    let phases = r.config.consumer.phases();
    let set_final = phases.last().map(|p| p.spec.mean_rate);
    let truth_final = r.ground_truth.last().map(|g| g.items_per_sec);
    let est = r.final_estimate();
    let (set_b, truth_b) = if phases.len() > 1 {
        (set_final, truth_final)
    } else {
        (None, None)
    };
    let class = r.classification.map(|c| c.class.as_str()).unwrap_or("");
    let unreliable = r.classification.map(|c| c.unreliable.to_string()).unwrap_or_default();
    format!(
        "{run},{seed},{},{},{},{},{},{},{},{},{class},{unreliable},{},{},{},{},{}",
        phases[0].spec.mean_rate,
        opt(set_b),
        opt(r.ground_truth.first().map(|g| g.items_per_sec)),
        opt(truth_b),
        opt(est),
        opt(est.zip(set_final).map(|(e, s)| percent_difference(e, s))),
        opt(est.zip(truth_final).map(|(e, t)| percent_difference(e, t))),
        r.estimates.len(),
        r.rho,
        if r.rho >= HIGH_RHO { "high" } else { "low" },
        r.usable,
        opt(r.nonblocked_fraction),
        r.wall_time_ns as f64 * 1e-9,
    )
}

fn bench(common: &Common, a: BenchArgs, monitor: MonitorConfig, clock: &SharedClock) -> anyhow::Result<()> {
    let mut configs = Vec::new();
    for i in 0..a.repeats {
        let seed = common.seed.wrapping_add(i as u64);
        let rates = match (&a.dual_phase, a.consumer_rate) {
            (Some(v), _) => v.clone(),
            (None, Some(r)) => vec![sweep_rate(r, a.sweep_to.unwrap_or(r), i, a.repeats)],
            (None, None) => bail!("either --consumer-rate or --dual-phase is required"),
        };
        let mut cfg = workload_config(&a.workload, &rates, &monitor, seed)?;
        cfg.truth_items = a.truth_items;
        cfg.monitoring = !a.no_monitor;
        cfg.validate()?;
        configs.push((i, seed, cfg));
    }

    let want_trace = a.trace.is_some();
    let run_one = |i: u32, cfg: &BenchConfig| -> ratescope::Result<(BenchReport, Vec<TraceRecord>)> {
        let events = Mutex::new(Vec::new());
        let rep = run_benchmark_with(cfg, clock.clone(), |e: MonitorEvent| {
            if want_trace {
                events.lock().expect("events poisoned").push(e);
            }
        })?;
        let mut records = Vec::new();
        if want_trace {
            if let Some(cal) = &rep.calibration {
                let run_id = format!("run-{i}");
                let period = cfg.monitor.period_ns.unwrap_or(cal.period_ns);
                let item_size = cfg.consumer.phases()[0].spec.item_size;
                records.push(TraceRecord::config(&run_id, cfg.monitor.clone(), period, item_size));
                for e in events.into_inner().expect("events poisoned") {
                    records.extend(TraceRecord::from_event(&run_id, &e));
                }
            }
        }
        Ok((rep, records))
    };

    let results: Vec<_> = if a.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|(i, _, cfg)| s.spawn(move || run_one(*i, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| ratescope::Error::Worker("bench repeat"))?)
                .collect()
        })
    } else {
        let mut v = Vec::new();
        for (i, _, cfg) in &configs {
            let r = run_one(*i, cfg);
            let stop = matches!(&r, Ok((rep, _)) if !rep.usable) || r.is_err();
            v.push(r);
            if stop {
                break;
            }
        }
        v
    };

    let format = common.format.unwrap_or(Format::Json);
    let mut w = open_out(&common.out)?;
    let mut summary = a.summary.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    let mut trace_out = a.trace.as_ref().map(File::create).transpose()?.map(BufWriter::new);
    if format == Format::Csv {
        writeln!(w, "{SUMMARY_HEADER}")?;
    }
    if let Some(s) = summary.as_mut() {
        writeln!(s, "{SUMMARY_HEADER}")?;
    }
    let mut failed = false;
    for ((i, seed, _), res) in configs.iter().zip(results) {
        let (rep, records) = res?;
        match format {
            Format::Json => {
                serde_json::to_writer(&mut w, &rep)?;
                writeln!(w)?;
            }
            Format::Csv => writeln!(w, "{}", summary_row(*i, *seed, &rep))?,
        }
        if let Some(s) = summary.as_mut() {
            writeln!(s, "{}", summary_row(*i, *seed, &rep))?;
        }
        if let Some(t) = trace_out.as_mut() {
            trace::write_trace(t, &records)?;
        }
        if !rep.usable {
            eprintln!("run {i}: sampling period calibration unstable; stopping");
            failed = true;
        }
    }
    w.flush()?;
    if let Some(mut s) = summary {
        s.flush()?;
    }
    if let Some(mut t) = trace_out {
        t.flush()?;
    }
    if failed {
        return Err(Reported.into());
    }
    Ok(())
}

fn overhead(common: &Common, a: OverheadArgs, monitor: MonitorConfig, clock: &SharedClock) -> anyhow::Result<()> {
    let cfg = workload_config(&a.workload, &[a.consumer_rate], &monitor, common.seed)?;
    cfg.validate()?;
    let rep = measure_overhead(&cfg, a.repeats as usize, a.control, clock.clone())?;
    let mut w = open_out(&common.out)?;
    match common.format.unwrap_or(Format::Json) {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "repeats,control,mean_instrumented_ns,mean_baseline_ns,ratio,ci_low,ci_high,insufficient_samples")?;
            let (lo, hi) = rep.ci95.map_or((None, None), |(l, h)| (Some(l), Some(h)));
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                rep.repeats,
                rep.control,
                rep.instrumented.mean_ns,
                rep.baseline.mean_ns,
                rep.ratio,
                opt(lo),
                opt(hi),
                rep.insufficient_samples
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn replay(common: &Common, a: ReplayArgs) -> anyhow::Result<()> {
    let f = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let reader: Box<dyn BufRead> = Box::new(BufReader::new(f));
    let recorded = trace::read_trace(reader).with_context(|| format!("reading {}", a.trace.display()))?;
    let derived = trace::replay(&recorded)?;
    let mut w = open_out(&common.out)?;
    match common.format.unwrap_or(Format::Json) {
        Format::Json => trace::write_trace(&mut w, &derived)?,
        Format::Csv => {
            writeln!(w, "run_id,phase_index,period_index,q_bar,rate_items_per_sec,rate_bytes_per_sec,n_q")?;
            for r in &derived {
                if let trace::TraceBody::Estimate { estimate: e } = &r.body {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        r.run_id, e.phase_index, e.period_index, e.q_bar, e.rate_items_per_sec, e.rate_bytes_per_sec, e.n_q
                    )?;
                }
            }
        }
    }
    w.flush()?;
    if a.check && derived != trace::derived(&recorded) {
        eprintln!("replay differs from the recorded q, q_bar, estimate or status records");
        return Err(Reported.into());
    }
    Ok(())
}

fn model(common: &Common, a: ModelArgs) -> anyhow::Result<()> {
    let mut w = open_out(&common.out)?;
    let format = common.format.unwrap_or(Format::Csv);
    if format == Format::Csv {
        writeln!(w, "T,rho,C,pr_read,pr_write")?;
    }
    for &t in &a.period_s {
        for &rho in &a.rho {
            for &c in &a.capacity {
                let scn = ObservationScenario::new(a.mu, rho, c, t)?;
                let (r, wr) = (pr_nonblocking_read(&scn), pr_nonblocking_write(&scn));
                match format {
                    Format::Csv => writeln!(w, "{t},{rho},{c},{r},{wr}")?,
                    Format::Json => {
                        serde_json::to_writer(&mut w, &json!({"T": t, "rho": rho, "C": c, "pr_read": r, "pr_write": wr}))?;
                        writeln!(w)?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
