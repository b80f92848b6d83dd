//! Cost of monitoring: the same benchmark with and without a harvesting
//! monitor, interleaved so that slow drift in the host hits both arms.

use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;
use crate::error::{Error, Result};
use crate::workload::{run_benchmark, BenchConfig};

/// Two-sided 95% normal quantile for the ratio interval.
const Z975: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub monitoring: bool,
    pub wall_time_ns: Vec<u64>,
    pub mean_ns: f64,
    pub std_err_ns: Option<f64>,
}

impl ArmStats {
    fn new(monitoring: bool, wall_time_ns: Vec<u64>) -> Self {
        let n = wall_time_ns.len() as f64;
        let mean_ns = wall_time_ns.iter().map(|&w| w as f64).sum::<f64>() / n;
        let std_err_ns = (wall_time_ns.len() >= 2).then(|| {
            let var = wall_time_ns
                .iter()
                .map(|&w| (w as f64 - mean_ns).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            (var / n).sqrt()
        });
        Self {
            monitoring,
            wall_time_ns,
            mean_ns,
            std_err_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub repeats: usize,
    /// Both arms ran unmonitored.
    pub control: bool,
    pub instrumented: ArmStats,
    pub baseline: ArmStats,
    /// Mean wall time of the instrumented arm over the baseline arm.
    pub ratio: f64,
    /// 95% interval for the ratio (delta method); absent with fewer than
    /// two runs per arm.
    pub ci95: Option<(f64, f64)>,
    pub insufficient_samples: bool,
}

impl OverheadReport {
    /// `(ratio - 1) * 100`.
    pub fn overhead_percent(&self) -> f64 {
        (self.ratio - 1.0) * 100.0
    }
}

/// Runs `repeats` benchmarks per arm, alternating arms. With `control` set
/// the "instrumented" arm also runs without a monitor.
pub fn measure_overhead(base: &BenchConfig, repeats: usize, control: bool, clock: SharedClock) -> Result<OverheadReport> {
    if repeats == 0 {
        return Err(Error::Config("overhead needs at least one repeat".into()));
    }
    let mut on = base.clone();
    on.monitoring = !control;
    on.truth_items = 0;
    let mut off = on.clone();
    off.monitoring = false;
    let (mut a, mut b) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
    for i in 0..repeats {
        // alternate which arm goes first so neither always runs warm
        let order = if i % 2 == 0 { [&on, &off] } else { [&off, &on] };
        for cfg in order {
            let rep = run_benchmark(cfg, clock.clone())?;
            if std::ptr::eq(cfg, &on) {
                a.push(rep.wall_time_ns);
            } else {
                b.push(rep.wall_time_ns);
            }
        }
    }
    let instrumented = ArmStats::new(on.monitoring, a);
    let baseline = ArmStats::new(false, b);
    let ratio = instrumented.mean_ns / baseline.mean_ns;
    let ci95 = match (instrumented.std_err_ns, baseline.std_err_ns) {
        (Some(sa), Some(sb)) => {
            let rel = ((sa / instrumented.mean_ns).powi(2) + (sb / baseline.mean_ns).powi(2)).sqrt();
            Some((ratio - Z975 * ratio * rel, ratio + Z975 * ratio * rel))
        }
        _ => None,
    };
    Ok(OverheadReport {
        repeats,
        control,
        insufficient_samples: ci95.is_none(),
        instrumented,
        baseline,
        ratio,
        ci95,
    })
}
