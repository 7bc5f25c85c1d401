mod common;

use std::collections::BTreeMap;

use cmprof_core::engine::{run_replay, Config, NMin};
use cmprof_core::oracle::{compare_cmetrics, oracle_run, relative_difference};
use cmprof_core::synth::{generate, Scenario};
use cmprof_core::trace::{
    parse_event, serialize_event, validate_trace, PrevState, Tid, TraceEvent,
};
use common::{random_trace, RandomTrace};
use proptest::prelude::*;

const SMALL: RandomTrace = RandomTrace {
    max_threads: 12,
    max_events: 400,
    no_overcommit: false,
};

fn fixed(n: u32) -> Config {
    Config {
        n_min: NMin::Fixed(n),
        ..Config::default()
    }
}

fn arb_event() -> impl Strategy<Value = TraceEvent> {
    let tid = (0u32..100).prop_map(Tid);
    prop_oneof![
        (any::<u64>(), 1u32..100, "[a-zA-Z0-9 _\\-\"\\\\é]{0,12}").prop_map(|(ts, t, comm)| {
            TraceEvent::TaskNew {
                ts,
                tid: Tid(t),
                comm,
            }
        }),
        (any::<u64>(), tid.clone()).prop_map(|(ts, tid)| TraceEvent::TaskExit { ts, tid }),
        (any::<u64>(), tid.clone()).prop_map(|(ts, tid)| TraceEvent::SchedWakeup { ts, tid }),
        (any::<u64>(), tid.clone(), any::<u64>()).prop_map(|(ts, tid, ip)| TraceEvent::Sample {
            ts,
            tid,
            ip
        }),
        (
            any::<u64>(),
            any::<u32>(),
            tid.clone(),
            any::<bool>(),
            tid,
            proptest::option::of(proptest::collection::vec(any::<u64>(), 0..20)),
        )
            .prop_map(|(ts, cpu, prev_tid, runnable, next_tid, prev_stack)| {
                TraceEvent::SchedSwitch {
                    ts,
                    cpu,
                    prev_tid,
                    prev_state: if runnable {
                        PrevState::Runnable
                    } else {
                        PrevState::Blocked
                    },
                    next_tid,
                    prev_stack,
                }
            }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_parse_round_trip(ev in arb_event()) {
        let line = serialize_event(&ev);
        prop_assert_eq!(parse_event(&line).unwrap(), ev);
    }

    #[test]
    fn random_traces_validate(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        prop_assert!(validate_trace(&trace).is_ok());
    }

    #[test]
    fn engine_matches_oracle(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        let engine = run_replay(&trace, &Config::default()).unwrap();
        let oracle = oracle_run(&trace).unwrap();
        let diverged = compare_cmetrics(&oracle.cmetric, &engine.stats.cm_hash, 1e-9);
        prop_assert!(diverged.is_empty(), "{:?}", diverged);
        prop_assert_eq!(engine.records.len(), oracle.slices.len());
    }

    #[test]
    fn threads_av_matches_oracle_and_bounds(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        let engine = run_replay(&trace, &Config::default()).unwrap();
        let oracle = oracle_run(&trace).unwrap();
        // both close slices in the same order
        for (r, o) in engine.records.iter().zip(&oracle.slices) {
            prop_assert_eq!((r.tid, r.t_in, r.t_out), (o.tid, o.t_in, o.t_out));
            if let Some(av) = o.threads_av() {
                prop_assert_eq!(r.threads_av, av);
                prop_assert!(r.threads_av >= 1.0);
            }
            prop_assert!(r.cmetric <= (r.t_out - r.t_in) as f64 * (1.0 + 1e-12));
            if !r.triggered {
                prop_assert!(r.samples.is_empty() && r.stack.is_empty());
            }
        }
    }

    #[test]
    fn threads_av_within_live_thread_count(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        let cfg = Config::default();
        let mut replay = cmprof_core::engine::Replay::new(cfg).unwrap();
        let mut max_total = 0;
        for ev in &trace {
            max_total = max_total.max(replay.state().total_count());
            if let Some(r) = replay.apply(ev).unwrap() {
                prop_assert!(r.threads_av >= 1.0 || r.t_in == r.t_out);
                prop_assert!(r.threads_av <= f64::from(max_total));
            }
            let st = replay.state();
            prop_assert!(st.total_count() >= st.thread_count());
        }
    }

    #[test]
    fn cmetric_sum_bounded_by_span(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        let out = run_replay(&trace, &Config::default()).unwrap();
        let total: f64 = out.stats.cm_hash.values().sum();
        prop_assert!(total <= out.stats.span() as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn conservation_without_overcommit(seed in any::<u64>()) {
        let trace = random_trace(seed, RandomTrace { no_overcommit: true, ..SMALL });
        let out = run_replay(&trace, &Config::default()).unwrap();
        let oracle = oracle_run(&trace).unwrap();
        let total: f64 = out.stats.cm_hash.values().sum();
        prop_assert!(relative_difference(total, oracle.active_time as f64) <= 1e-9);
    }

    #[test]
    fn lowering_n_min_only_removes_triggers(seed in any::<u64>(), a in 1u32..8, b in 1u32..8) {
        let (lo, hi) = (a.min(b), a.max(b));
        let trace = random_trace(seed, SMALL);
        let low = run_replay(&trace, &fixed(lo)).unwrap();
        let high = run_replay(&trace, &fixed(hi)).unwrap();
        for (l, h) in low.records.iter().zip(&high.records) {
            prop_assert!(!l.triggered || h.triggered);
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let trace = random_trace(seed, SMALL);
        let a = run_replay(&trace, &fixed(3)).unwrap();
        let b = run_replay(&trace, &fixed(3)).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synth_traces_validate_and_match_truth(
        kind in 0usize..4,
        threads in 1u32..9,
        seed in any::<u64>(),
        period in 1_000u64..50_000,
    ) {
        let scenario = match kind {
            0 => Scenario::serial_phase(threads, 100_000, 400_000),
            1 => Scenario::balanced(threads, 100_000),
            2 => Scenario::lock_convoy(threads, 20_000, 5_000, 3).cpus(threads.div_ceil(2)),
            _ => Scenario::pipeline(vec![1, threads, 1], vec![7_000, 30_000, 3_000], 12).cpus(threads + 1),
        }
        .seed(seed)
        .sample_period(period);
        let syn = generate(&scenario).unwrap();
        prop_assert!(validate_trace(&syn.trace).is_ok());
        let out = run_replay(&syn.trace, &Config::default()).unwrap();
        let diverged = compare_cmetrics(&syn.truth.per_thread_cmetric, &out.stats.cm_hash, 1e-9);
        prop_assert!(diverged.is_empty(), "{:?}", diverged);
        let exp = syn.truth.expect(NMin::HalfTotal, 16);
        prop_assert_eq!(out.stats.total_slices, exp.total_slices);
        prop_assert_eq!(out.stats.critical_slices, exp.critical_slices);
    }
}

#[test]
fn per_thread_table_has_every_app_thread() {
    let trace = random_trace(7, SMALL);
    let stats = validate_trace(&trace).unwrap();
    let out = run_replay(&trace, &Config::default()).unwrap();
    let seen: BTreeMap<Tid, f64> = out.stats.cm_hash.clone();
    for tid in seen.keys() {
        assert!(stats.app_tids.contains(tid));
    }
}
