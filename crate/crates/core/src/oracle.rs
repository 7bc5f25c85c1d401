//! Reference CMetric computed straight from the definition.
//!
//! The trace is cut at every distinct event timestamp. For each resulting
//! interval the active thread count `n` is read off the reconstructed thread
//! states, and `T / n` is credited to every thread on a CPU during it. Nothing
//! here shares code with the incremental engine.

use std::collections::BTreeMap;

use crate::engine::{ConsistencyError, ReplayError, ThreadState};
use crate::trace::{Nanos, PrevState, Tid, TraceEvent};

/// One on-CPU slice as seen by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSlice {
    pub tid: Tid,
    pub t_in: Nanos,
    pub t_out: Nanos,
    pub cmetric: f64,
    /// Sum of `T * n` over the slice's intervals.
    pub thread_ns: u128,
}

impl OracleSlice {
    pub fn threads_av(&self) -> Option<f64> {
        let d = self.t_out - self.t_in;
        (d > 0).then(|| self.thread_ns as f64 / d as f64)
    }
}

#[derive(Clone, Debug, Default)]
pub struct OracleResult {
    pub cmetric: BTreeMap<Tid, f64>,
    pub slices: Vec<OracleSlice>,
    /// Total length of intervals with at least one active thread.
    pub active_time: Nanos,
}

struct OpenSlice {
    t_in: Nanos,
    cmetric: f64,
    thread_ns: u128,
}

/// Per-thread CMetric by direct interval enumeration.
pub fn oracle_cmetric(events: &[TraceEvent]) -> Result<BTreeMap<Tid, f64>, ReplayError> {
    Ok(oracle_run(events)?.cmetric)
}

pub fn oracle_run(events: &[TraceEvent]) -> Result<OracleResult, ReplayError> {
    let mut states: BTreeMap<Tid, ThreadState> = BTreeMap::new();
    let mut open: BTreeMap<Tid, OpenSlice> = BTreeMap::new();
    let mut out = OracleResult::default();
    let mut last: Option<Nanos> = None;

    let fail = |index, source| Err(ReplayError::Consistency { index, source });

    for (index, ev) in events.iter().enumerate() {
        let ts = ev.ts();
        if let Some(prev) = last {
            if ts < prev {
                return fail(
                    index,
                    ConsistencyError::TimestampRegression { t_switch: prev, ts },
                );
            }
            if ts > prev {
                let span = ts - prev;
                let n = states.values().filter(|s| s.is_active()).count() as u64;
                if n > 0 {
                    out.active_time += span;
                    for slice in open.values_mut() {
                        slice.cmetric += span as f64 / n as f64;
                        slice.thread_ns += u128::from(span) * u128::from(n);
                    }
                }
            }
        }
        last = Some(ts);

        let close = |open: &mut BTreeMap<Tid, OpenSlice>, out: &mut OracleResult, tid: Tid| {
            if let Some(s) = open.remove(&tid) {
                *out.cmetric.entry(tid).or_insert(0.0) += s.cmetric;
                out.slices.push(OracleSlice {
                    tid,
                    t_in: s.t_in,
                    t_out: ts,
                    cmetric: s.cmetric,
                    thread_ns: s.thread_ns,
                });
            }
        };

        match ev {
            TraceEvent::TaskNew { tid, .. } => {
                if !tid.is_idle() {
                    states.entry(*tid).or_insert(ThreadState::Inactive);
                }
            }
            TraceEvent::TaskExit { tid, .. } => {
                close(&mut open, &mut out, *tid);
                states.remove(tid);
            }
            TraceEvent::SchedWakeup { tid, .. } => {
                if let Some(s) = states.get_mut(tid) {
                    if *s == ThreadState::Inactive {
                        *s = ThreadState::Runnable;
                    }
                }
            }
            TraceEvent::SchedSwitch {
                prev_tid,
                prev_state,
                next_tid,
                ..
            } => {
                if let Some(s) = states.get(prev_tid).copied() {
                    if s != ThreadState::Running {
                        return fail(
                            index,
                            ConsistencyError::PrevNotRunning {
                                tid: *prev_tid,
                                state: s,
                            },
                        );
                    }
                    close(&mut open, &mut out, *prev_tid);
                    states.insert(
                        *prev_tid,
                        match prev_state {
                            PrevState::Runnable => ThreadState::Runnable,
                            PrevState::Blocked => ThreadState::Inactive,
                        },
                    );
                }
                if let Some(s) = states.get(next_tid).copied() {
                    if s == ThreadState::Running {
                        return fail(
                            index,
                            ConsistencyError::NextAlreadyRunning { tid: *next_tid },
                        );
                    }
                    states.insert(*next_tid, ThreadState::Running);
                    open.insert(
                        *next_tid,
                        OpenSlice {
                            t_in: ts,
                            cmetric: 0.0,
                            thread_ns: 0,
                        },
                    );
                }
            }
            TraceEvent::Sample { .. } => {}
        }
    }

    if let Some(end) = last {
        for (tid, s) in std::mem::take(&mut open) {
            *out.cmetric.entry(tid).or_insert(0.0) += s.cmetric;
            out.slices.push(OracleSlice {
                tid,
                t_in: s.t_in,
                t_out: end,
                cmetric: s.cmetric,
                thread_ns: s.thread_ns,
            });
        }
    }
    Ok(out)
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// A per-thread disagreement between two CMetric tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub tid: Tid,
    pub expected: f64,
    pub actual: f64,
}

/// Threads whose values differ by more than `rel_tol`. A thread missing on
/// one side counts as zero there.
pub fn compare_cmetrics(
    expected: &BTreeMap<Tid, f64>,
    actual: &BTreeMap<Tid, f64>,
    rel_tol: f64,
) -> Vec<Divergence> {
    let mut tids: Vec<Tid> = expected.keys().chain(actual.keys()).copied().collect();
    tids.sort_unstable();
    tids.dedup();
    tids.into_iter()
        .filter_map(|tid| {
            let e = expected.get(&tid).copied().unwrap_or(0.0);
            let a = actual.get(&tid).copied().unwrap_or(0.0);
            (relative_difference(e, a) > rel_tol).then_some(Divergence {
                tid,
                expected: e,
                actual: a,
            })
        })
        .collect()
}
