//! JSON-lines traces of monitor activity, and their replay.
//!
//! A trace opens with a `config` record per run, then carries every harvested
//! `snapshot` followed by whatever the heuristic derived from it (`q`,
//! `q_bar`, `estimate`, `status`). Replaying the snapshots through a fresh
//! heuristic regenerates the derived records bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use ratescope_core::ique::TransactionSnapshot;
use ratescope_core::monitor::{MonitorConfig, MonitorStatus, RateEstimate, RateHeuristic};

use crate::error::{Error, Result};
use crate::live::{process_snapshot, MonitorEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceBody {
    Config {
        monitor: MonitorConfig,
        period_ns: u64,
        item_size: u64,
    },
    Snapshot {
        snapshot: TransactionSnapshot,
    },
    Q {
        value: f64,
    },
    QBar {
        value: f64,
    },
    Estimate {
        estimate: RateEstimate,
    },
    Status {
        status: MonitorStatus,
    },
}

impl TraceBody {
    /// Order of kinds within one period.
    pub fn rank(&self) -> u8 {
        match self {
            Self::Config { .. } => 0,
            Self::Snapshot { .. } => 1,
            Self::Q { .. } => 2,
            Self::QBar { .. } => 3,
            Self::Estimate { .. } => 4,
            Self::Status { .. } => 5,
        }
    }

    pub fn is_derived(&self) -> bool {
        self.rank() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run_id: String,
    pub period_index: u64,
    pub timestamp_ns: u64,
    #[serde(flatten)]
    pub body: TraceBody,
}

impl TraceRecord {
    pub fn config(run_id: &str, monitor: MonitorConfig, period_ns: u64, item_size: u64) -> Self {
        Self {
            run_id: run_id.into(),
            period_index: 0,
            timestamp_ns: 0,
            body: TraceBody::Config {
                monitor,
                period_ns,
                item_size,
            },
        }
    }

    /// Trace records for one monitor event, in rank order.
    pub fn from_event(run_id: &str, event: &MonitorEvent) -> Vec<Self> {
        let rec = |period_index, timestamp_ns, body| Self {
            run_id: run_id.into(),
            period_index,
            timestamp_ns,
            body,
        };
        match *event {
            MonitorEvent::Snapshot(s) => vec![rec(s.period_index, s.timestamp_ns, TraceBody::Snapshot { snapshot: s })],
            MonitorEvent::Quantile {
                period_index,
                timestamp_ns,
                q,
                q_bar,
            } => vec![
                rec(period_index, timestamp_ns, TraceBody::Q { value: q }),
                rec(period_index, timestamp_ns, TraceBody::QBar { value: q_bar }),
            ],
            MonitorEvent::Estimate(e) => vec![rec(e.period_index, e.wall_clock_ns, TraceBody::Estimate { estimate: e })],
            MonitorEvent::Status(st) => {
                let MonitorStatus::Undeterminable { period_index, .. } = st;
                vec![rec(period_index, 0, TraceBody::Status { status: st })]
            }
        }
    }
}

pub fn write_record<W: Write>(w: &mut W, rec: &TraceRecord) -> Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_trace<W: Write>(w: &mut W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        write_record(w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a JSON-lines trace; blank lines are skipped, errors name the
/// 1-based line.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Feeds every snapshot of `trace` through a fresh heuristic per run and
/// returns the derived records it produces.
pub fn replay(trace: &[TraceRecord]) -> Result<Vec<TraceRecord>> {
    let mut runs: BTreeMap<&str, RateHeuristic> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, rec) in trace.iter().enumerate() {
        match &rec.body {
            TraceBody::Config {
                monitor,
                period_ns,
                item_size,
            } => {
                runs.insert(&rec.run_id, RateHeuristic::new(monitor.clone(), *period_ns, *item_size)?);
            }
            TraceBody::Snapshot { snapshot } => {
                let h = runs.get_mut(rec.run_id.as_str()).ok_or_else(|| Error::Trace {
                    line: i + 1,
                    message: format!("snapshot for run '{}' before its config record", rec.run_id),
                })?;
                process_snapshot(h, snapshot, &mut |e| {
                    if !matches!(e, MonitorEvent::Snapshot(_)) {
                        out.extend(TraceRecord::from_event(&rec.run_id, &e));
                    }
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Derived records of a recorded trace, for comparison with [`replay`].
pub fn derived(trace: &[TraceRecord]) -> Vec<TraceRecord> {
    trace.iter().filter(|r| r.body.is_derived()).cloned().collect()
}
