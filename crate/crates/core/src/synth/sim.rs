//! Minimal discrete-event scheduler: fixed CPU count, FIFO run queue, no
//! preemption, zero-cost context switches.
//!
//! A [`Workload`] decides what each thread does next. The simulator turns
//! those decisions into trace events and keeps its own record of when each
//! thread was active and on a CPU, which the ground truth is computed from.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::layout::FuncId;
use crate::trace::{Addr, Nanos, PrevState, Tid, TraceEvent};

pub enum Action {
    /// Stay on CPU executing `func` for `dur` nanoseconds.
    Compute { func: FuncId, dur: Nanos },
    /// Go to sleep until another thread wakes us.
    Block { stack: Vec<Addr> },
    /// Leave the CPU and terminate.
    Exit { stack: Vec<Addr> },
}

#[derive(Default)]
pub struct Ctx {
    wakes: Vec<usize>,
}

impl Ctx {
    pub fn wake(&mut self, thread: usize) {
        self.wakes.push(thread);
    }
}

pub trait Workload {
    fn thread_count(&self) -> usize;
    fn comm(&self, thread: usize) -> String;
    fn step(&mut self, thread: usize, ctx: &mut Ctx) -> Action;
}

/// Time `thread` spent executing `func`.
#[derive(Clone, Debug)]
pub struct Segment {
    pub thread: usize,
    pub start: Nanos,
    pub end: Nanos,
    pub func: FuncId,
}

/// An on-CPU interval and what the thread looked like when it left.
#[derive(Clone, Debug)]
pub struct SimSlice {
    pub thread: usize,
    pub start: Nanos,
    pub end: Nanos,
    pub stack: Vec<Addr>,
    /// Live threads at switch-out.
    pub alive: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunState {
    Blocked,
    Runnable,
    Running { since: Nanos },
    Exited,
}

#[derive(Default)]
pub struct SimLog {
    pub events: Vec<TraceEvent>,
    pub segments: Vec<Segment>,
    pub slices: Vec<SimSlice>,
    /// `[start, end)` intervals during which a thread was runnable or running.
    pub active: Vec<(usize, Nanos, Nanos)>,
    pub end: Nanos,
}

pub fn tid_of(thread: usize) -> Tid {
    Tid(thread as u32 + 1)
}

struct Sim<'w, W: Workload> {
    work: &'w mut W,
    now: Nanos,
    cpus: Vec<Option<usize>>,
    runqueue: VecDeque<usize>,
    state: Vec<RunState>,
    active_since: Vec<Option<Nanos>>,
    alive: u32,
    timers: BinaryHeap<Reverse<(Nanos, u64, usize)>>,
    seq: u64,
    log: SimLog,
}

impl<W: Workload> Sim<'_, W> {
    fn activate(&mut self, t: usize) {
        if self.active_since[t].is_none() {
            self.active_since[t] = Some(self.now);
        }
    }

    fn deactivate(&mut self, t: usize) {
        if let Some(since) = self.active_since[t].take() {
            self.log.active.push((t, since, self.now));
        }
    }

    fn switch_in(
        &mut self,
        cpu: usize,
        prev: Option<(usize, PrevState, Vec<Addr>)>,
        next: Option<usize>,
    ) {
        let (prev_tid, prev_state, prev_stack) = match prev {
            Some((t, st, stack)) => (tid_of(t), st, Some(stack)),
            None => (Tid::IDLE, PrevState::Blocked, None),
        };
        self.log.events.push(TraceEvent::SchedSwitch {
            ts: self.now,
            cpu: cpu as u32,
            prev_tid,
            prev_state,
            next_tid: next.map(tid_of).unwrap_or(Tid::IDLE),
            prev_stack,
        });
        self.cpus[cpu] = next;
        if let Some(n) = next {
            self.activate(n);
            self.state[n] = RunState::Running { since: self.now };
        }
    }

    fn cpu_of(&self, t: usize) -> usize {
        self.cpus
            .iter()
            .position(|c| *c == Some(t))
            .expect("running thread holds a cpu")
    }

    fn leave_cpu(&mut self, t: usize, stack: Vec<Addr>, exiting: bool) -> Option<usize> {
        let RunState::Running { since } = self.state[t] else {
            unreachable!("only running threads leave a cpu")
        };
        self.log.slices.push(SimSlice {
            thread: t,
            start: since,
            end: self.now,
            stack: stack.clone(),
            alive: self.alive,
        });
        self.deactivate(t);
        self.state[t] = if exiting {
            RunState::Exited
        } else {
            RunState::Blocked
        };
        let cpu = self.cpu_of(t);
        let next = self.runqueue.pop_front();
        self.switch_in(cpu, Some((t, PrevState::Blocked, stack)), next);
        if exiting {
            self.alive -= 1;
            self.log.events.push(TraceEvent::TaskExit {
                ts: self.now,
                tid: tid_of(t),
            });
        }
        next
    }

    fn wake(&mut self, t: usize) {
        if self.state[t] != RunState::Blocked {
            return;
        }
        self.log.events.push(TraceEvent::SchedWakeup {
            ts: self.now,
            tid: tid_of(t),
        });
        self.activate(t);
        self.state[t] = RunState::Runnable;
        self.runqueue.push_back(t);
    }

    fn fill_idle(&mut self, ready: &mut VecDeque<usize>) {
        while !self.runqueue.is_empty() {
            let Some(cpu) = self.cpus.iter().position(Option::is_none) else {
                break;
            };
            let next = self.runqueue.pop_front();
            self.switch_in(cpu, None, next);
            ready.extend(next);
        }
    }

    fn dispatch(&mut self, t: usize, ready: &mut VecDeque<usize>) {
        loop {
            let mut ctx = Ctx::default();
            let action = self.work.step(t, &mut ctx);
            for w in ctx.wakes {
                self.wake(w);
            }
            match action {
                Action::Compute { dur: 0, .. } => continue,
                Action::Compute { func, dur } => {
                    self.log.segments.push(Segment {
                        thread: t,
                        start: self.now,
                        end: self.now + dur,
                        func,
                    });
                    self.seq += 1;
                    self.timers.push(Reverse((self.now + dur, self.seq, t)));
                }
                Action::Block { stack } => ready.extend(self.leave_cpu(t, stack, false)),
                Action::Exit { stack } => ready.extend(self.leave_cpu(t, stack, true)),
            }
            break;
        }
    }

    fn drain(&mut self, ready: &mut VecDeque<usize>) {
        loop {
            while let Some(t) = ready.pop_front() {
                self.dispatch(t, ready);
            }
            self.fill_idle(ready);
            if ready.is_empty() {
                break;
            }
        }
    }

    fn run(mut self) -> SimLog {
        let n = self.work.thread_count();
        for t in 0..n {
            self.log.events.push(TraceEvent::TaskNew {
                ts: 0,
                tid: tid_of(t),
                comm: self.work.comm(t),
            });
        }
        self.alive = n as u32;
        let mut ready = VecDeque::new();
        for t in 0..n {
            match self.cpus.iter().position(Option::is_none) {
                Some(cpu) => {
                    self.switch_in(cpu, None, Some(t));
                    ready.push_back(t);
                }
                None => {
                    self.log.events.push(TraceEvent::SchedWakeup {
                        ts: 0,
                        tid: tid_of(t),
                    });
                    self.activate(t);
                    self.state[t] = RunState::Runnable;
                    self.runqueue.push_back(t);
                }
            }
        }
        self.drain(&mut ready);

        while let Some(Reverse((at, _, t))) = self.timers.pop() {
            self.now = at;
            ready.push_back(t);
            self.drain(&mut ready);
        }

        // threads left sleeping terminate with the process
        for t in 0..n {
            if self.state[t] == RunState::Blocked {
                self.state[t] = RunState::Exited;
                self.alive -= 1;
                self.log.events.push(TraceEvent::TaskExit {
                    ts: self.now,
                    tid: tid_of(t),
                });
            }
        }
        debug_assert!(self.state.iter().all(|s| *s == RunState::Exited));
        self.log.end = self.now;
        self.log
    }
}

/// Runs `work` on `cpus` processors until every thread has exited or is
/// permanently blocked.
pub fn simulate<W: Workload>(work: &mut W, cpus: usize) -> SimLog {
    let n = work.thread_count();
    Sim {
        work,
        now: 0,
        cpus: vec![None; cpus],
        runqueue: VecDeque::new(),
        state: vec![RunState::Blocked; n],
        active_since: vec![None; n],
        alive: 0,
        timers: BinaryHeap::new(),
        seq: 0,
        log: SimLog::default(),
    }
    .run()
}
