use std::collections::VecDeque;

use super::layout::{CodeLayout, FuncId};
use super::sim::{Action, Ctx, Workload};
use crate::trace::{Addr, Nanos};

/// Offsets of the return addresses used in synthetic stacks.
const LEAF_SITE: Addr = 0x10;
const MID_SITE: Addr = 0x30;
const ROOT_SITE: Addr = 0x20;

pub(super) struct Funcs {
    pub worker_main: FuncId,
    pub thread_exit: FuncId,
}

impl Funcs {
    fn new(layout: &mut CodeLayout) -> Self {
        Funcs {
            worker_main: layout.add("worker_main"),
            thread_exit: layout.add("thread_exit"),
        }
    }

    fn stack(&self, layout: &CodeLayout, frames: &[FuncId]) -> Vec<Addr> {
        let n = frames.len();
        let mut out: Vec<Addr> = frames
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let site = if i == 0 { LEAF_SITE } else { MID_SITE };
                layout.call_site(f, site + (n - i) as Addr)
            })
            .collect();
        out.push(layout.call_site(self.worker_main, ROOT_SITE));
        out
    }
}

/// All threads run a parallel region, then thread 0 alone runs the serial
/// function while the others wait at a barrier.
pub(super) struct SerialPhase {
    pub threads: usize,
    pub parallel_ns: Nanos,
    pub serial_ns: Nanos,
    pub parallel_work: FuncId,
    pub serial_work: FuncId,
    pub barrier_wait: FuncId,
    funcs: Funcs,
    layout: CodeLayout,
    step: Vec<u8>,
}

impl SerialPhase {
    pub fn new(threads: usize, parallel_ns: Nanos, serial_ns: Nanos) -> Self {
        let mut layout = CodeLayout::new();
        let funcs = Funcs::new(&mut layout);
        SerialPhase {
            threads,
            parallel_ns,
            serial_ns,
            parallel_work: layout.add("parallel_work"),
            serial_work: layout.add("serial_work"),
            barrier_wait: layout.add("barrier_wait"),
            funcs,
            layout,
            step: vec![0; threads],
        }
    }

    pub fn serial_path(&self) -> Vec<Addr> {
        self.funcs.stack(&self.layout, &[self.serial_work])
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }
}

impl Workload for SerialPhase {
    fn thread_count(&self) -> usize {
        self.threads
    }

    fn comm(&self, thread: usize) -> String {
        format!("worker-{thread}")
    }

    fn step(&mut self, t: usize, _ctx: &mut Ctx) -> Action {
        let s = self.step[t];
        self.step[t] += 1;
        match (t, s) {
            (_, 0) => Action::Compute {
                func: self.parallel_work,
                dur: self.parallel_ns,
            },
            (0, 1) => Action::Compute {
                func: self.serial_work,
                dur: self.serial_ns,
            },
            (0, _) => Action::Exit {
                stack: self.serial_path(),
            },
            _ => Action::Block {
                stack: self.funcs.stack(&self.layout, &[self.barrier_wait]),
            },
        }
    }
}

/// Independent equal-length work on every thread.
pub(super) struct Balanced {
    pub threads: usize,
    pub work_ns: Nanos,
    pub work: FuncId,
    funcs: Funcs,
    layout: CodeLayout,
    started: Vec<bool>,
}

impl Balanced {
    pub fn new(threads: usize, work_ns: Nanos) -> Self {
        let mut layout = CodeLayout::new();
        let funcs = Funcs::new(&mut layout);
        Balanced {
            threads,
            work_ns,
            work: layout.add("balanced_work"),
            funcs,
            layout,
            started: vec![false; threads],
        }
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }
}

impl Workload for Balanced {
    fn thread_count(&self) -> usize {
        self.threads
    }

    fn comm(&self, thread: usize) -> String {
        format!("worker-{thread}")
    }

    fn step(&mut self, t: usize, _ctx: &mut Ctx) -> Action {
        if std::mem::replace(&mut self.started[t], true) {
            Action::Exit {
                stack: self.funcs.stack(&self.layout, &[self.work]),
            }
        } else {
            Action::Compute {
                func: self.work,
                dur: self.work_ns,
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ConvoyPhase {
    Acquire,
    Waiting,
    InCritical,
    InWork,
}

/// Threads repeatedly enter `critical_section`, which takes a FIFO mutex
/// with direct hand-off, runs for `critical_ns`, releases, and then run
/// `parallel_work` for `work_ns` outside the lock.
pub(super) struct LockConvoy {
    pub threads: usize,
    pub critical_ns: Nanos,
    pub work_ns: Nanos,
    pub critical: FuncId,
    pub lock_acquire: FuncId,
    pub parallel_work: FuncId,
    funcs: Funcs,
    layout: CodeLayout,
    rounds_left: Vec<u32>,
    phase: Vec<ConvoyPhase>,
    holder: Option<usize>,
    waiters: VecDeque<usize>,
}

impl LockConvoy {
    pub fn new(threads: usize, critical_ns: Nanos, work_ns: Nanos, rounds: u32) -> Self {
        let mut layout = CodeLayout::new();
        let funcs = Funcs::new(&mut layout);
        LockConvoy {
            threads,
            critical_ns,
            work_ns,
            critical: layout.add("critical_section"),
            lock_acquire: layout.add("lock_acquire"),
            parallel_work: layout.add("parallel_work"),
            funcs,
            layout,
            rounds_left: vec![rounds; threads],
            phase: vec![ConvoyPhase::Acquire; threads],
            holder: None,
            waiters: VecDeque::new(),
        }
    }

    /// Stack of a thread blocked on the mutex inside the critical function.
    pub fn wait_path(&self) -> Vec<Addr> {
        self.funcs
            .stack(&self.layout, &[self.lock_acquire, self.critical])
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    fn enter_critical(&mut self, t: usize) -> Action {
        self.phase[t] = ConvoyPhase::InCritical;
        Action::Compute {
            func: self.critical,
            dur: self.critical_ns,
        }
    }
}

impl Workload for LockConvoy {
    fn thread_count(&self) -> usize {
        self.threads
    }

    fn comm(&self, thread: usize) -> String {
        format!("convoy-{thread}")
    }

    fn step(&mut self, t: usize, ctx: &mut Ctx) -> Action {
        loop {
            match self.phase[t] {
                ConvoyPhase::Waiting => {
                    debug_assert_eq!(self.holder, Some(t));
                    return self.enter_critical(t);
                }
                ConvoyPhase::InCritical => {
                    self.rounds_left[t] -= 1;
                    self.holder = self.waiters.pop_front();
                    if let Some(w) = self.holder {
                        ctx.wake(w);
                    }
                    self.phase[t] = ConvoyPhase::InWork;
                    if self.work_ns > 0 {
                        return Action::Compute {
                            func: self.parallel_work,
                            dur: self.work_ns,
                        };
                    }
                }
                ConvoyPhase::InWork => self.phase[t] = ConvoyPhase::Acquire,
                ConvoyPhase::Acquire => {
                    if self.rounds_left[t] == 0 {
                        return Action::Exit {
                            stack: self.funcs.stack(&self.layout, &[self.funcs.thread_exit]),
                        };
                    }
                    if self.holder.is_none() {
                        self.holder = Some(t);
                        return self.enter_critical(t);
                    }
                    self.waiters.push_back(t);
                    self.phase[t] = ConvoyPhase::Waiting;
                    return Action::Block {
                        stack: self.wait_path(),
                    };
                }
            }
        }
    }
}

#[derive(Clone, Copy, Default)]
struct StageThread {
    stage: usize,
    reserved: bool,
    processing: bool,
}

/// Multi-stage pipeline with unbounded queues. Stage 0 produces `items`
/// work items; each later stage pops from the queue before it, blocking
/// while the queue is empty.
pub(super) struct Pipeline {
    pub stages: Vec<u32>,
    pub service_ns: Vec<Nanos>,
    pub items: u32,
    pub stage_funcs: Vec<FuncId>,
    pub queue_pop: FuncId,
    funcs: Funcs,
    layout: CodeLayout,
    threads: Vec<StageThread>,
    /// `queues[i]` feeds stage `i + 1`.
    queues: Vec<u32>,
    claimed: Vec<u32>,
    waiters: Vec<VecDeque<usize>>,
}

impl Pipeline {
    pub fn new(stages: Vec<u32>, service_ns: Vec<Nanos>, items: u32) -> Self {
        let mut layout = CodeLayout::new();
        let funcs = Funcs::new(&mut layout);
        let stage_funcs = (0..stages.len())
            .map(|i| layout.add(&format!("stage_{i}_work")))
            .collect();
        let queue_pop = layout.add("queue_pop");
        let threads = stages
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| {
                (0..n).map(move |_| StageThread {
                    stage: s,
                    ..Default::default()
                })
            })
            .collect();
        let n = stages.len();
        Pipeline {
            stages,
            service_ns,
            items,
            stage_funcs,
            queue_pop,
            funcs,
            layout,
            threads,
            queues: vec![0; n.saturating_sub(1)],
            claimed: vec![0; n],
            waiters: vec![VecDeque::new(); n],
        }
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    fn claim(&mut self, stage: usize, ctx: &mut Ctx) {
        self.claimed[stage] += 1;
        if self.claimed[stage] == self.items {
            // nothing left for this stage: release idle waiters so they exit
            for w in self.waiters[stage].drain(..) {
                ctx.wake(w);
            }
        }
    }

    fn start_item(&mut self, t: usize) -> Action {
        let s = self.threads[t].stage;
        self.threads[t].processing = true;
        Action::Compute {
            func: self.stage_funcs[s],
            dur: self.service_ns[s],
        }
    }
}

impl Workload for Pipeline {
    fn thread_count(&self) -> usize {
        self.threads.len()
    }

    fn comm(&self, thread: usize) -> String {
        format!("stage{}-{thread}", self.threads[thread].stage)
    }

    fn step(&mut self, t: usize, ctx: &mut Ctx) -> Action {
        let s = self.threads[t].stage;
        if std::mem::take(&mut self.threads[t].processing) && s + 1 < self.stages.len() {
            if let Some(w) = self.waiters[s + 1].pop_front() {
                self.threads[w].reserved = true;
                self.claim(s + 1, ctx);
                ctx.wake(w);
            } else {
                self.queues[s] += 1;
            }
        }
        if std::mem::take(&mut self.threads[t].reserved) {
            return self.start_item(t);
        }
        if self.claimed[s] == self.items {
            return Action::Exit {
                stack: self.funcs.stack(&self.layout, &[self.funcs.thread_exit]),
            };
        }
        if s == 0 {
            self.claim(0, ctx);
            return self.start_item(t);
        }
        if self.queues[s - 1] > 0 {
            self.queues[s - 1] -= 1;
            self.claim(s, ctx);
            return self.start_item(t);
        }
        self.waiters[s].push_back(t);
        Action::Block {
            stack: self
                .funcs
                .stack(&self.layout, &[self.queue_pop, self.stage_funcs[s]]),
        }
    }
}
