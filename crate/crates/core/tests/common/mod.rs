#![allow(dead_code)]

use cmprof_core::trace::{Addr, Nanos, PrevState, Tid, TraceEvent};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct RandomTrace {
    pub max_threads: u32,
    pub max_events: usize,
    /// Every woken thread is switched in at the instant it wakes and nobody
    /// is ever preempted, so active always means on-CPU.
    pub no_overcommit: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum St {
    Unborn,
    Inactive,
    Runnable,
    Running(usize),
    Dead,
}

/// A random trace that passes `validate_trace`: thread lifecycles, wakeups
/// (some redundant), preemptions, blocking, exits while running, samples,
/// and plenty of events sharing a timestamp.
pub fn random_trace(seed: u64, p: RandomTrace) -> Vec<TraceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threads = rng.random_range(1..=p.max_threads) as usize;
    let cpus = if p.no_overcommit {
        threads
    } else {
        rng.random_range(1..=threads.min(8))
    };
    let target = rng.random_range(1..=p.max_events);

    let mut st = vec![St::Unborn; threads];
    let mut cpu: Vec<Option<usize>> = vec![None; cpus];
    let mut out: Vec<TraceEvent> = Vec::with_capacity(target + 4);
    let mut ts: Nanos = rng.random_range(0..1_000);
    let tid = |i: usize| Tid(i as u32 + 1);
    let stack = |rng: &mut ChaCha8Rng| -> Option<Vec<Addr>> {
        if rng.random_bool(0.2) {
            None
        } else {
            let depth = rng.random_range(0..6);
            Some(
                (0..depth)
                    .map(|_| 0x1000 + rng.random_range(0..8) * 0x10)
                    .collect(),
            )
        }
    };

    while out.len() < target {
        if rng.random_bool(0.6) {
            ts += match rng.random_range(0..10) {
                0 => rng.random_range(1..1_000_000_000),
                1..=3 => rng.random_range(1..100),
                _ => rng.random_range(1..100_000),
            };
        }
        let idx = rng.random_range(0..threads);
        let free_cpu = cpu.iter().position(Option::is_none);
        match rng.random_range(0..100) {
            // create
            0..=9 => {
                if st[idx] == St::Unborn || (st[idx] == St::Dead && rng.random_bool(0.3)) {
                    st[idx] = St::Inactive;
                    out.push(TraceEvent::TaskNew {
                        ts,
                        tid: tid(idx),
                        comm: format!("t{idx}"),
                    });
                }
            }
            // wakeup
            10..=29 => match st[idx] {
                St::Inactive if p.no_overcommit => {
                    if let Some(c) = free_cpu {
                        out.push(TraceEvent::SchedWakeup { ts, tid: tid(idx) });
                        out.push(TraceEvent::SchedSwitch {
                            ts,
                            cpu: c as u32,
                            prev_tid: Tid::IDLE,
                            prev_state: PrevState::Blocked,
                            next_tid: tid(idx),
                            prev_stack: None,
                        });
                        st[idx] = St::Running(c);
                        cpu[c] = Some(idx);
                    }
                }
                St::Inactive => {
                    out.push(TraceEvent::SchedWakeup { ts, tid: tid(idx) });
                    st[idx] = St::Runnable;
                }
                St::Runnable | St::Running(_) if !p.no_overcommit => {
                    out.push(TraceEvent::SchedWakeup { ts, tid: tid(idx) });
                }
                _ => {
                    // wakeup of a foreign thread
                    out.push(TraceEvent::SchedWakeup {
                        ts,
                        tid: Tid(10_000 + idx as u32),
                    });
                }
            },
            // context switch on a random cpu
            30..=69 => {
                let c = rng.random_range(0..cpus);
                let candidates: Vec<usize> = (0..threads)
                    .filter(|&i| matches!(st[i], St::Runnable | St::Inactive))
                    .collect();
                let next = if p.no_overcommit {
                    // only inactive threads are waiting; switching them in directly keeps
                    // active == running
                    candidates
                        .choose(&mut rng)
                        .copied()
                        .filter(|_| rng.random_bool(0.5))
                } else {
                    candidates
                        .choose(&mut rng)
                        .copied()
                        .filter(|_| rng.random_bool(0.8))
                };
                let prev = cpu[c];
                if prev.is_none() && next.is_none() {
                    continue;
                }
                let prev_state = if p.no_overcommit || rng.random_bool(0.5) {
                    PrevState::Blocked
                } else {
                    PrevState::Runnable
                };
                out.push(TraceEvent::SchedSwitch {
                    ts,
                    cpu: c as u32,
                    prev_tid: prev.map(tid).unwrap_or(Tid::IDLE),
                    prev_state,
                    next_tid: next.map(tid).unwrap_or(Tid::IDLE),
                    prev_stack: if prev.is_some() {
                        stack(&mut rng)
                    } else {
                        None
                    },
                });
                if let Some(pv) = prev {
                    st[pv] = match prev_state {
                        PrevState::Runnable => St::Runnable,
                        PrevState::Blocked => St::Inactive,
                    };
                }
                cpu[c] = next;
                if let Some(n) = next {
                    st[n] = St::Running(c);
                }
            }
            // sample, sometimes for a thread that is not running
            70..=92 => {
                let ip = 0x1000 + rng.random_range(0..0x100);
                let running: Vec<usize> = cpu.iter().flatten().copied().collect();
                let who = if !running.is_empty() && rng.random_bool(0.85) {
                    tid(*running.choose(&mut rng).unwrap())
                } else {
                    tid(idx)
                };
                out.push(TraceEvent::Sample { ts, tid: who, ip });
            }
            // exit
            _ => match st[idx] {
                St::Inactive | St::Runnable => {
                    if p.no_overcommit && st[idx] == St::Runnable {
                        continue;
                    }
                    out.push(TraceEvent::TaskExit { ts, tid: tid(idx) });
                    st[idx] = St::Dead;
                }
                St::Running(c) => {
                    out.push(TraceEvent::TaskExit { ts, tid: tid(idx) });
                    st[idx] = St::Dead;
                    // the cpu keeps no app thread afterwards
                    cpu[c] = None;
                }
                _ => {}
            },
        }
    }
    out
}

pub const DEFAULT: RandomTrace = RandomTrace {
    max_threads: 64,
    max_events: 10_000,
    no_overcommit: false,
};
