//! Deterministic trace generator with known answers.
//!
//! Each scenario is run through a small scheduler simulation. Ground truth is
//! derived from the simulator's own record of which threads were active and
//! on a CPU, never from the replay engine. For the simple scenarios it also
//! has a closed form:
//!
//! * `SerialPhase` with `k` threads, parallel length `P`, serial length `S`:
//!   the serial thread gets `P/k + S`, every other thread `P/k`.
//! * `Balanced` with `k` threads of length `L`: each thread gets `L/k`.
//! * `LockConvoy` with no parallel work: only the lock holder is ever active,
//!   so each thread gets `rounds * C`.

mod layout;
mod sim;
mod workloads;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub use layout::{CodeLayout, FuncId, CODE_BASE, FUNCTION_SIZE};
pub use sim::tid_of;

use crate::engine::{NMin, DEFAULT_SAMPLE_PERIOD};
use crate::symbols::SymbolMap;
use crate::trace::{Addr, Nanos, Tid, TraceEvent};
use sim::{simulate, SimLog, Workload};
use workloads::{Balanced, LockConvoy, Pipeline, SerialPhase};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    SerialPhase {
        parallel_ns: Nanos,
        serial_ns: Nanos,
    },
    LockConvoy {
        critical_ns: Nanos,
        work_ns: Nanos,
        rounds: u32,
    },
    Pipeline {
        /// Threads per stage.
        stages: Vec<u32>,
        /// Service time per item, per stage.
        service_ns: Vec<Nanos>,
        items: u32,
    },
    Balanced {
        work_ns: Nanos,
    },
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::SerialPhase { .. } => "serial",
            ScenarioKind::LockConvoy { .. } => "convoy",
            ScenarioKind::Pipeline { .. } => "pipeline",
            ScenarioKind::Balanced { .. } => "balanced",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub threads: u32,
    pub cpus: u32,
    pub seed: u64,
    pub sample_period: Nanos,
}

impl Scenario {
    pub fn serial_phase(threads: u32, parallel_ns: Nanos, serial_ns: Nanos) -> Self {
        Self::with_kind(
            ScenarioKind::SerialPhase {
                parallel_ns,
                serial_ns,
            },
            threads,
        )
    }

    pub fn balanced(threads: u32, work_ns: Nanos) -> Self {
        Self::with_kind(ScenarioKind::Balanced { work_ns }, threads)
    }

    pub fn lock_convoy(threads: u32, critical_ns: Nanos, work_ns: Nanos, rounds: u32) -> Self {
        Self::with_kind(
            ScenarioKind::LockConvoy {
                critical_ns,
                work_ns,
                rounds,
            },
            threads,
        )
    }

    pub fn pipeline(stages: Vec<u32>, service_ns: Vec<Nanos>, items: u32) -> Self {
        let threads = stages.iter().sum();
        Self::with_kind(
            ScenarioKind::Pipeline {
                stages,
                service_ns,
                items,
            },
            threads,
        )
    }

    fn with_kind(kind: ScenarioKind, threads: u32) -> Self {
        Scenario {
            kind,
            threads,
            cpus: threads,
            seed: 0,
            sample_period: DEFAULT_SAMPLE_PERIOD,
        }
    }

    pub fn cpus(mut self, cpus: u32) -> Self {
        self.cpus = cpus;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sample_period(mut self, period: Nanos) -> Self {
        self.sample_period = period;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        use ScenarioError::*;
        if self.threads == 0 {
            return Err(NoThreads);
        }
        if self.cpus == 0 {
            return Err(NoCpus);
        }
        if self.sample_period == 0 {
            return Err(ZeroDuration("sample_period"));
        }
        match &self.kind {
            ScenarioKind::SerialPhase {
                parallel_ns,
                serial_ns,
            } => {
                if *parallel_ns == 0 {
                    return Err(ZeroDuration("parallel_ns"));
                }
                if *serial_ns == 0 {
                    return Err(ZeroDuration("serial_ns"));
                }
                if self.threads > self.cpus {
                    return Err(Overcommitted);
                }
            }
            ScenarioKind::Balanced { work_ns } => {
                if *work_ns == 0 {
                    return Err(ZeroDuration("work_ns"));
                }
                if self.threads > self.cpus {
                    return Err(Overcommitted);
                }
            }
            ScenarioKind::LockConvoy {
                critical_ns,
                rounds,
                ..
            } => {
                if *critical_ns == 0 {
                    return Err(ZeroDuration("critical_ns"));
                }
                if *rounds == 0 {
                    return Err(NoRounds);
                }
            }
            ScenarioKind::Pipeline {
                stages,
                service_ns,
                items,
            } => {
                if stages.is_empty() || stages.contains(&0) {
                    return Err(EmptyStage);
                }
                if service_ns.len() != stages.len() {
                    return Err(ServiceMismatch {
                        stages: stages.len(),
                        service: service_ns.len(),
                    });
                }
                if service_ns.contains(&0) {
                    return Err(ZeroDuration("service_ns"));
                }
                if *items == 0 {
                    return Err(NoItems);
                }
                if stages.iter().sum::<u32>() != self.threads {
                    return Err(ThreadMismatch);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("at least one thread is required")]
    NoThreads,
    #[error("at least one cpu is required")]
    NoCpus,
    #[error("{0} must be positive")]
    ZeroDuration(&'static str),
    #[error("this scenario needs at least as many cpus as threads")]
    Overcommitted,
    #[error("rounds must be positive")]
    NoRounds,
    #[error("every pipeline stage needs at least one thread")]
    EmptyStage,
    #[error("{stages} stages but {service} service times")]
    ServiceMismatch { stages: usize, service: usize },
    #[error("items must be positive")]
    NoItems,
    #[error("thread count must equal the sum of stage sizes")]
    ThreadMismatch,
}

/// One on-CPU slice as the simulator saw it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthSlice {
    pub tid: Tid,
    pub t_in: Nanos,
    pub t_out: Nanos,
    pub cmetric: f64,
    /// Integral of the active thread count over the slice.
    pub thread_ns: u128,
    pub stack: Vec<Addr>,
    pub alive_at_switchout: u32,
}

impl TruthSlice {
    fn triggered(&self, n_min: NMin) -> bool {
        let d = self.t_out - self.t_in;
        d > 0
            && n_min
                .threshold(self.alive_at_switchout)
                .above_average(self.thread_ns, d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub total_slices: u64,
    pub critical_slices: u64,
    pub cr: f64,
    pub top_path: Option<Vec<Addr>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruth {
    pub per_thread_cmetric: BTreeMap<Tid, f64>,
    pub slices: Vec<TruthSlice>,
    /// Length of time with at least one active thread.
    pub active_time: Nanos,
    pub span: Nanos,
    /// The call path the scenario is built around.
    pub designed_path: Option<Vec<Addr>>,
    /// Address range of the function the scenario's bottleneck executes.
    pub bottleneck_range: Option<(Addr, Addr)>,
}

impl GroundTruth {
    /// Critical slice count, CR and top-ranked path under `n_min`.
    pub fn expect(&self, n_min: NMin, stack_depth: usize) -> Expectation {
        let mut by_path: BTreeMap<Vec<Addr>, f64> = BTreeMap::new();
        let mut critical = 0;
        for s in &self.slices {
            if s.triggered(n_min) {
                critical += 1;
                let key: Vec<Addr> = s.stack.iter().take(stack_depth).copied().collect();
                *by_path.entry(key).or_insert(0.0) += s.cmetric;
            }
        }
        let top_path = by_path
            .into_iter()
            .fold(None::<(Vec<Addr>, f64)>, |best, (p, v)| match best {
                Some((bp, bv)) if bv >= v => Some((bp, bv)),
                _ => Some((p, v)),
            })
            .map(|(p, _)| p);
        let total = self.slices.len() as u64;
        Expectation {
            total_slices: total,
            critical_slices: critical,
            cr: if total == 0 {
                0.0
            } else {
                critical as f64 / total as f64
            },
            top_path,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub scenario: Scenario,
    pub trace: Vec<TraceEvent>,
    pub symbols: SymbolMap,
    pub truth: GroundTruth,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} threads, {} cpus, seed {})",
            self.kind.name(),
            self.threads,
            self.cpus,
            self.seed
        )
    }
}

struct Built {
    log: SimLog,
    layout: CodeLayout,
    designed_path: Option<Vec<Addr>>,
    bottleneck: Option<FuncId>,
}

fn run<W: Workload>(mut w: W, cpus: u32) -> (SimLog, W) {
    let log = simulate(&mut w, cpus as usize);
    (log, w)
}

pub fn generate(s: &Scenario) -> Result<Synthesis, ScenarioError> {
    s.validate()?;
    let built = match &s.kind {
        ScenarioKind::SerialPhase {
            parallel_ns,
            serial_ns,
        } => {
            let (log, w) = run(
                SerialPhase::new(s.threads as usize, *parallel_ns, *serial_ns),
                s.cpus,
            );
            Built {
                log,
                designed_path: Some(w.serial_path()),
                bottleneck: Some(w.serial_work),
                layout: w.layout().clone(),
            }
        }
        ScenarioKind::Balanced { work_ns } => {
            let (log, w) = run(Balanced::new(s.threads as usize, *work_ns), s.cpus);
            Built {
                log,
                designed_path: None,
                bottleneck: None,
                layout: w.layout().clone(),
            }
        }
        ScenarioKind::LockConvoy {
            critical_ns,
            work_ns,
            rounds,
        } => {
            let (log, w) = run(
                LockConvoy::new(s.threads as usize, *critical_ns, *work_ns, *rounds),
                s.cpus,
            );
            Built {
                log,
                designed_path: Some(w.wait_path()),
                bottleneck: Some(w.critical),
                layout: w.layout().clone(),
            }
        }
        ScenarioKind::Pipeline {
            stages,
            service_ns,
            items,
        } => {
            let (log, w) = run(
                Pipeline::new(stages.clone(), service_ns.clone(), *items),
                s.cpus,
            );
            Built {
                log,
                designed_path: None,
                bottleneck: None,
                layout: w.layout().clone(),
            }
        }
    };

    let trace = with_samples(&built.log, &built.layout, s.sample_period, s.seed);
    let truth = ground_truth(
        &built.log,
        built.designed_path,
        built.bottleneck.map(|f| {
            let r = built.layout.range(f);
            (r.start, r.end)
        }),
    );
    Ok(Synthesis {
        scenario: s.clone(),
        trace,
        symbols: built.layout.symbol_map(),
        truth,
    })
}

/// Interleaves periodic samples with the scheduler events. A sample at time
/// `t` follows every scheduler event stamped `t`.
fn with_samples(log: &SimLog, layout: &CodeLayout, period: Nanos, seed: u64) -> Vec<TraceEvent> {
    let mut ticks: Vec<(Nanos, Tid, FuncId)> = Vec::new();
    for seg in &log.segments {
        let mut t = seg.start.div_ceil(period) * period;
        while t < seg.end {
            ticks.push((t, tid_of(seg.thread), seg.func));
            t += period;
        }
    }
    ticks.sort_by_key(|&(t, tid, _)| (t, tid));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(log.events.len() + ticks.len());
    let mut pending = ticks.into_iter().peekable();
    for ev in &log.events {
        while let Some(&(t, tid, func)) = pending.peek() {
            if t >= ev.ts() {
                break;
            }
            let ip = layout.base(func) + rng.random_range(0..FUNCTION_SIZE);
            out.push(TraceEvent::Sample { ts: t, tid, ip });
            pending.next();
        }
        out.push(ev.clone());
    }
    for (t, tid, func) in pending {
        let ip = layout.base(func) + rng.random_range(0..FUNCTION_SIZE);
        out.push(TraceEvent::Sample { ts: t, tid, ip });
    }
    out
}

fn ground_truth(
    log: &SimLog,
    designed_path: Option<Vec<Addr>>,
    bottleneck_range: Option<(Addr, Addr)>,
) -> GroundTruth {
    // active-thread count as a step function of time
    let mut deltas: BTreeMap<Nanos, i64> = BTreeMap::new();
    for &(_, a, b) in &log.active {
        if a < b {
            *deltas.entry(a).or_insert(0) += 1;
            *deltas.entry(b).or_insert(0) -= 1;
        }
    }
    let mut steps: Vec<(Nanos, u64)> = Vec::with_capacity(deltas.len());
    let mut level: i64 = 0;
    for (t, d) in deltas {
        level += d;
        steps.push((t, level as u64));
    }

    let mut per_thread: BTreeMap<Tid, f64> = BTreeMap::new();
    let mut slices = Vec::with_capacity(log.slices.len());
    for s in &log.slices {
        let tid = tid_of(s.thread);
        let mut cmetric = 0.0;
        let mut thread_ns: u128 = 0;
        // first step at or before the slice start
        let mut i = steps
            .partition_point(|&(t, _)| t <= s.start)
            .saturating_sub(1);
        let mut cursor = s.start;
        while cursor < s.end && i < steps.len() {
            let next = steps.get(i + 1).map_or(Nanos::MAX, |&(t, _)| t).min(s.end);
            let n = steps[i].1;
            if next > cursor && n > 0 {
                let span = next - cursor;
                cmetric += span as f64 / n as f64;
                thread_ns += u128::from(span) * u128::from(n);
            }
            cursor = cursor.max(next);
            i += 1;
        }
        *per_thread.entry(tid).or_insert(0.0) += cmetric;
        slices.push(TruthSlice {
            tid,
            t_in: s.start,
            t_out: s.end,
            cmetric,
            thread_ns,
            stack: s.stack.clone(),
            alive_at_switchout: s.alive,
        });
    }

    let mut active_time = 0;
    for w in steps.windows(2) {
        if w[0].1 > 0 {
            active_time += w[1].0 - w[0].0;
        }
    }

    GroundTruth {
        per_thread_cmetric: per_thread,
        slices,
        active_time,
        span: log.end,
        designed_path,
        bottleneck_range,
    }
}

/// `truth.json` contents for a scenario analysed with `n_min`.
#[derive(Clone, Debug, Serialize)]
pub struct TruthFile<'a> {
    pub scenario: &'a Scenario,
    pub n_min: NMin,
    pub stack_depth: usize,
    pub per_thread_cmetric: BTreeMap<String, f64>,
    pub total_slices: u64,
    pub critical_slices: u64,
    pub cr: f64,
    pub top_path: Option<Vec<Addr>>,
    pub top_function: Option<String>,
    pub active_time_ns: Nanos,
    pub span_ns: Nanos,
}

impl Synthesis {
    pub fn truth_file(&self, n_min: NMin, stack_depth: usize) -> TruthFile<'_> {
        let exp = self.truth.expect(n_min, stack_depth);
        let top_function = exp
            .top_path
            .as_ref()
            .and_then(|p| p.first())
            .and_then(|&a| self.symbols.lookup(a))
            .map(|l| l.function.to_owned());
        TruthFile {
            scenario: &self.scenario,
            n_min,
            stack_depth,
            per_thread_cmetric: self
                .truth
                .per_thread_cmetric
                .iter()
                .map(|(t, v)| (t.to_string(), *v))
                .collect(),
            total_slices: exp.total_slices,
            critical_slices: exp.critical_slices,
            cr: exp.cr,
            top_path: exp.top_path,
            top_function,
            active_time_ns: self.truth.active_time,
            span_ns: self.truth.span,
        }
    }
}
