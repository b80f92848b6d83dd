use proptest::prelude::*;

use ratescope::live::process_snapshot;
use ratescope::trace::{self, TraceBody, TraceRecord};
use ratescope_core::ique::TransactionSnapshot;
use ratescope_core::monitor::{MonitorConfig, RateHeuristic};

fn record(run: &str, counts: &[(u64, bool)], period_ns: u64) -> Vec<TraceRecord> {
    let cfg = MonitorConfig::default();
    let mut h = RateHeuristic::new(cfg.clone(), period_ns, 8).unwrap();
    let mut recs = vec![TraceRecord::config(run, cfg, period_ns, 8)];
    for (i, &(tc, blocked)) in counts.iter().enumerate() {
        let i = i as u64;
        let s = TransactionSnapshot {
            period_index: i,
            tc_head: tc,
            tc_tail: tc,
            head_blocked: blocked,
            tail_blocked: false,
            realized_period_ns: period_ns,
            timestamp_ns: (i + 1) * period_ns,
        };
        process_snapshot(&mut h, &s, &mut |e| recs.extend(TraceRecord::from_event(run, &e)));
    }
    recs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_reproduces_recording(
        base in 1u64..10_000,
        jitter in prop::collection::vec((0u64..50, prop::bool::weighted(0.05)), 0..600),
        period_ns in 1_000u64..10_000_000,
    ) {
        let counts: Vec<(u64, bool)> = jitter.iter().map(|&(j, b)| (base + j, b)).collect();
        let recs = record("p", &counts, period_ns);
        let mut buf = Vec::new();
        trace::write_trace(&mut buf, &recs).unwrap();
        let back = trace::read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(trace::replay(&back).unwrap(), trace::derived(&recs));
    }

    #[test]
    fn interleaved_runs_replay_independently(
        a in prop::collection::vec(100u64..120, 100..300),
        b in prop::collection::vec(5_000u64..5_500, 100..300),
    ) {
        let ra = record("a", &a.iter().map(|&c| (c, false)).collect::<Vec<_>>(), 10_000);
        let rb = record("b", &b.iter().map(|&c| (c, false)).collect::<Vec<_>>(), 10_000);
        let mut merged = Vec::new();
        let (mut ia, mut ib) = (ra.iter(), rb.iter());
        loop {
            match (ia.next(), ib.next()) {
                (None, None) => break,
                (x, y) => merged.extend(x.into_iter().chain(y).cloned()),
            }
        }
        let replayed = trace::replay(&merged).unwrap();
        let only = |run: &str| replayed.iter().filter(|r| r.run_id == run).cloned().collect::<Vec<_>>();
        prop_assert_eq!(only("a"), trace::derived(&ra));
        prop_assert_eq!(only("b"), trace::derived(&rb));
    }
}

#[test]
fn derived_records_never_precede_their_snapshot() {
    let counts: Vec<(u64, bool)> = (0..500).map(|i| (1000 + i % 7, i % 50 == 0)).collect();
    let recs = record("o", &counts, 50_000);
    let mut last_snapshot = None;
    for r in &recs {
        match r.body {
            TraceBody::Snapshot { .. } => last_snapshot = Some(r.period_index),
            _ if r.body.is_derived() => assert_eq!(Some(r.period_index), last_snapshot),
            _ => {}
        }
    }
}
