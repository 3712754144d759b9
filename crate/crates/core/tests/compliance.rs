mod common;

use common::{ready_time, uncovered_length};
use proptest::prelude::*;
use sanitrack::compliance::{ComplianceConfig, ComplianceEngine, HandEvent, Status, StatusChange};

const DT: f64 = 0.1;

/// Drives one track present on steps `a..=b` of a 0.1 s clock, with hands
/// over the bath on `gates` (step index pairs, half-open at the release).
fn replay(
    a: usize,
    b: usize,
    steps: usize,
    gates: &[(usize, usize)],
    required: f64,
) -> (ComplianceEngine, Vec<StatusChange>) {
    let mut e = ComplianceEngine::new(ComplianceConfig { required_dwell: required }).unwrap();
    let mut changes = Vec::new();
    for i in 0..steps {
        let t = i as f64 * DT;
        for &(s, end) in gates {
            if i == s {
                changes.extend(e.on_hand_event(HandEvent { timestamp: t, present: true }).unwrap());
            }
            if i == end {
                changes.extend(e.on_hand_event(HandEvent { timestamp: t, present: false }).unwrap());
            }
        }
        let ids: &[u64] = if (a..=b).contains(&i) { &[1] } else { &[] };
        changes.extend(e.step(ids, t).unwrap());
    }
    (e, changes)
}

fn gate_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..300, 1usize..60), 0..4).prop_map(|mut v| {
        v.sort();
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (s, len) in v {
            let s = out.last().map_or(s, |l| s.max(l.1 + 1));
            out.push((s, s + len));
        }
        out
    })
}

#[test]
fn scripted_schedule_ready_at_twenty_seconds() {
    // 10 s present, hand from 10 s to 15 s, present again until 21 s.
    let (e, changes) = replay(0, 210, 211, &[(100, 150)], 15.0);
    let r = e.record(1).unwrap();
    assert!((r.dwell - 16.0).abs() < 1e-9);
    assert_eq!(changes.len(), 1);
    assert!((changes[0].t - 20.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dwell_equals_ungated_presence(a in 0usize..100, len in 1usize..250, gates in gate_strategy(), required in 0.5f64..20.0) {
        let b = a + len;
        let (e, changes) = replay(a, b, b + 1, &gates, required);
        let secs: Vec<(f64, f64)> = gates.iter().map(|&(s, t)| (s as f64 * DT, t as f64 * DT)).collect();
        let (ta, tb) = (a as f64 * DT, b as f64 * DT);
        let r = e.record(1).unwrap();
        prop_assert!((r.dwell - uncovered_length(ta, tb, &secs)).abs() < 1e-9, "{} vs {}", r.dwell, uncovered_length(ta, tb, &secs));
        match ready_time(ta, tb, &secs, required) {
            Some(t) => {
                prop_assert_eq!(changes.len(), 1);
                prop_assert!((changes[0].t - t).abs() < 1e-9, "{} vs {}", changes[0].t, t);
                prop_assert_eq!(r.status, Status::Ready);
            }
            None => {
                prop_assert!(changes.is_empty());
                prop_assert_eq!(r.status, Status::Sanitizing);
            }
        }
    }

    #[test]
    fn ready_is_monotone_and_sticky(a in 0usize..50, len in 1usize..200, gates in gate_strategy(), required in 0.5f64..10.0) {
        let b = a + len;
        let mut e = ComplianceEngine::new(ComplianceConfig { required_dwell: required }).unwrap();
        let mut was_ready = false;
        let mut last_dwell = 0.0;
        for i in 0..b + 40 {
            let t = i as f64 * DT;
            for &(s, end) in &gates {
                if i == s { e.on_hand_event(HandEvent { timestamp: t, present: true }).unwrap(); }
                if i == end { e.on_hand_event(HandEvent { timestamp: t, present: false }).unwrap(); }
            }
            let ids: &[u64] = if (a..=b).contains(&i) { &[1] } else { &[] };
            e.step(ids, t).unwrap();
            if let Some(r) = e.record(1) {
                prop_assert!(r.dwell >= last_dwell);
                last_dwell = r.dwell;
                let ready = r.status == Status::Ready;
                prop_assert!(!was_ready || ready);
                prop_assert_eq!(ready, r.dwell >= required);
                was_ready = ready;
            }
        }
    }
}
