//! Single-pass replay of a scheduler trace.
//!
//! The engine keeps one logical copy of the probe state a kernel-side
//! profiler would hold: the active/total thread counts, the running sum of
//! `interval / active_threads` (`global_cm`), the running sum of
//! `interval * active_threads` (`global_nt`), and per-thread snapshots of both
//! taken at switch-in. A timeslice's CMetric is then a single subtraction at
//! switch-out, and its average parallelism (`threads_av`) another.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Addr, Nanos, PrevState, Tid, TraceEvent};

/// Parallelism threshold below which a timeslice counts as critical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NMin {
    Fixed(u32),
    /// Half the live application thread count at the moment of comparison.
    HalfTotal,
}

impl NMin {
    pub fn threshold(self, total_count: u32) -> Threshold {
        match self {
            NMin::Fixed(n) => Threshold {
                num: u64::from(n),
                den: 1,
            },
            NMin::HalfTotal => Threshold {
                num: u64::from(total_count),
                den: 2,
            },
        }
    }
}

/// A rational threshold `num / den`, compared exactly against integer data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Threshold {
    num: u64,
    den: u64,
}

impl Threshold {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `count < threshold`
    pub fn above_count(self, count: u32) -> bool {
        u64::from(count) * self.den < self.num
    }

    /// `count <= threshold`
    pub fn at_least_count(self, count: u32) -> bool {
        u64::from(count) * self.den <= self.num
    }

    /// `thread_ns / duration < threshold`, with `duration > 0`.
    pub fn above_average(self, thread_ns: u128, duration: Nanos) -> bool {
        thread_ns * u128::from(self.den) < u128::from(self.num) * u128::from(duration)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub n_min: NMin,
    /// Number of stack entries kept per critical timeslice.
    pub stack_depth: usize,
    /// Sampling period, used when generating traces.
    pub sample_period: Nanos,
}

pub const DEFAULT_STACK_DEPTH: usize = 16;
pub const DEFAULT_SAMPLE_PERIOD: Nanos = 3_000_000;

impl Default for Config {
    fn default() -> Self {
        Config {
            n_min: NMin::HalfTotal,
            stack_depth: DEFAULT_STACK_DEPTH,
            sample_period: DEFAULT_SAMPLE_PERIOD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("fixed N_min must be at least 1")]
    ZeroNMin,
    #[error("stack depth must be at least 1")]
    ZeroStackDepth,
    #[error("sample period must be positive")]
    ZeroSamplePeriod,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_min == NMin::Fixed(0) {
            return Err(ConfigError::ZeroNMin);
        }
        if self.stack_depth == 0 {
            return Err(ConfigError::ZeroStackDepth);
        }
        if self.sample_period == 0 {
            return Err(ConfigError::ZeroSamplePeriod);
        }
        Ok(())
    }
}

/// Compensated running sum. Slice CMetrics are differences of two large
/// prefix sums, so the prefix sum carries its rounding error separately.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    /// `self - earlier`, accurate to the precision of the difference itself.
    pub fn since(&self, earlier: &CompensatedSum) -> f64 {
        let (s, e) = two_sum(self.hi, -earlier.hi);
        s + (e + (self.lo - earlier.lo))
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bp = s - a;
    let e = (a - (s - bp)) + (b - bp);
    (s, e)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThreadState {
    Inactive,
    Runnable,
    Running,
}

impl ThreadState {
    pub fn is_active(self) -> bool {
        !matches!(self, ThreadState::Inactive)
    }
}

#[derive(Clone, Debug)]
struct ThreadEntry {
    state: ThreadState,
    local_cm: CompensatedSum,
    local_nt: u128,
    t_in: Nanos,
    pending_samples: Vec<Addr>,
}

impl ThreadEntry {
    fn new() -> Self {
        ThreadEntry {
            state: ThreadState::Inactive,
            local_cm: CompensatedSum::default(),
            local_nt: 0,
            t_in: 0,
            pending_samples: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Sample,
    StackTop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub ip: Addr,
    pub provenance: Provenance,
}

/// One on-CPU slice of an application thread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimesliceRecord {
    pub ts_id: u64,
    pub tid: Tid,
    pub t_in: Nanos,
    pub t_out: Nanos,
    pub cmetric: f64,
    pub threads_av: f64,
    pub triggered: bool,
    pub stack: Vec<Addr>,
    pub samples: Vec<SampleEntry>,
    pub thread_count_at_switchout: u32,
}

impl TimesliceRecord {
    pub fn duration(&self) -> Nanos {
        self.t_out - self.t_in
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConsistencyError {
    #[error("thread {tid} switched out while {state:?}, not running")]
    PrevNotRunning { tid: Tid, state: ThreadState },
    #[error("thread {tid} switched in while already running")]
    NextAlreadyRunning { tid: Tid },
    #[error("event at {ts} precedes last switching instant {t_switch}")]
    TimestampRegression { t_switch: Nanos, ts: Nanos },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("event {index}: {source}")]
    Consistency {
        index: usize,
        source: ConsistencyError,
    },
}

/// Mutable replay state.
#[derive(Clone, Debug, Default)]
pub struct EngineState {
    threads: HashMap<Tid, ThreadEntry>,
    thread_count: u32,
    total_count: u32,
    t_switch: Nanos,
    global_cm: CompensatedSum,
    global_nt: u128,
    cm_hash: BTreeMap<Tid, f64>,
    ts_counter: u64,
}

impl EngineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn thread_count(&self) -> u32 {
        self.thread_count
    }

    pub fn total_count(&self) -> u32 {
        self.total_count
    }

    pub fn t_switch(&self) -> Nanos {
        self.t_switch
    }

    pub fn global_cm(&self) -> f64 {
        self.global_cm.value()
    }

    pub fn global_nt(&self) -> u128 {
        self.global_nt
    }

    pub fn thread_state(&self, tid: Tid) -> Option<ThreadState> {
        self.threads.get(&tid).map(|t| t.state)
    }

    pub fn pending_samples(&self, tid: Tid) -> &[Addr] {
        self.threads
            .get(&tid)
            .map(|t| t.pending_samples.as_slice())
            .unwrap_or(&[])
    }

    pub fn cm_hash(&self) -> &BTreeMap<Tid, f64> {
        &self.cm_hash
    }

    /// Threads currently on a CPU, in tid order.
    pub fn running_threads(&self) -> Vec<Tid> {
        let mut tids: Vec<Tid> = self
            .threads
            .iter()
            .filter(|(_, t)| t.state == ThreadState::Running)
            .map(|(tid, _)| *tid)
            .collect();
        tids.sort_unstable();
        tids
    }

    /// Closes the switching interval `[t_switch, t)`.
    pub fn advance_interval(&mut self, t: Nanos) {
        debug_assert!(t >= self.t_switch);
        let span = t - self.t_switch;
        if span > 0 && self.thread_count > 0 {
            self.global_cm
                .add(span as f64 / f64::from(self.thread_count));
            self.global_nt += u128::from(span) * u128::from(self.thread_count);
        }
        self.t_switch = t;
    }

    fn set_state(&mut self, tid: Tid, new: ThreadState) {
        let entry = self.threads.get_mut(&tid).expect("known thread");
        match (entry.state.is_active(), new.is_active()) {
            (false, true) => self.thread_count += 1,
            (true, false) => self.thread_count -= 1,
            _ => {}
        }
        entry.state = new;
    }

    /// Applies one event. Consumers of the returned record see slices in the
    /// order they close.
    pub fn apply_event(
        &mut self,
        ev: &TraceEvent,
        cfg: &Config,
    ) -> Result<Option<TimesliceRecord>, ConsistencyError> {
        let ts = ev.ts();
        if ts < self.t_switch {
            return Err(ConsistencyError::TimestampRegression {
                t_switch: self.t_switch,
                ts,
            });
        }
        self.advance_interval(ts);

        match ev {
            TraceEvent::TaskNew { tid, .. } => {
                if tid.is_idle() || self.threads.contains_key(tid) {
                    return Ok(None);
                }
                self.threads.insert(*tid, ThreadEntry::new());
                self.total_count += 1;
                Ok(None)
            }
            TraceEvent::TaskExit { tid, .. } => {
                let Some(state) = self.thread_state(*tid) else {
                    return Ok(None);
                };
                // a thread exiting on-CPU ends its slice here
                let record = (state == ThreadState::Running)
                    .then(|| self.close_timeslice(*tid, ts, None, cfg));
                self.set_state(*tid, ThreadState::Inactive);
                self.threads.remove(tid);
                self.total_count -= 1;
                Ok(record)
            }
            TraceEvent::SchedWakeup { tid, .. } => {
                if self.thread_state(*tid) == Some(ThreadState::Inactive) {
                    self.set_state(*tid, ThreadState::Runnable);
                }
                Ok(None)
            }
            TraceEvent::SchedSwitch {
                prev_tid,
                prev_state,
                next_tid,
                prev_stack,
                ..
            } => {
                let mut record = None;
                if let Some(state) = self.thread_state(*prev_tid) {
                    if state != ThreadState::Running {
                        return Err(ConsistencyError::PrevNotRunning {
                            tid: *prev_tid,
                            state,
                        });
                    }
                    record = Some(self.close_timeslice(*prev_tid, ts, prev_stack.as_deref(), cfg));
                    let after = match prev_state {
                        PrevState::Runnable => ThreadState::Runnable,
                        PrevState::Blocked => ThreadState::Inactive,
                    };
                    self.set_state(*prev_tid, after);
                }
                if let Some(state) = self.thread_state(*next_tid) {
                    if state == ThreadState::Running {
                        return Err(ConsistencyError::NextAlreadyRunning { tid: *next_tid });
                    }
                    self.set_state(*next_tid, ThreadState::Running);
                    let (global_cm, global_nt) = (self.global_cm, self.global_nt);
                    let entry = self.threads.get_mut(next_tid).expect("known thread");
                    entry.local_cm = global_cm;
                    entry.local_nt = global_nt;
                    entry.t_in = ts;
                    entry.pending_samples.clear();
                }
                Ok(record)
            }
            TraceEvent::Sample { tid, ip, .. } => {
                let gate = cfg.n_min.threshold(self.total_count);
                if gate.above_count(self.thread_count) {
                    if let Some(entry) = self.threads.get_mut(tid) {
                        if entry.state == ThreadState::Running {
                            entry.pending_samples.push(*ip);
                        }
                    }
                }
                Ok(None)
            }
        }
    }

    /// Ends the running slice of `tid` at `t_out`. Accumulators must already
    /// be advanced to `t_out`; the thread's own state is left untouched.
    pub fn close_timeslice(
        &mut self,
        tid: Tid,
        t_out: Nanos,
        prev_stack: Option<&[Addr]>,
        cfg: &Config,
    ) -> TimesliceRecord {
        let gate = cfg.n_min.threshold(self.total_count);
        let count = self.thread_count;
        let (global_cm, global_nt) = (self.global_cm, self.global_nt);
        let entry = self.threads.get_mut(&tid).expect("running thread");
        debug_assert_eq!(entry.state, ThreadState::Running);

        let t_in = entry.t_in;
        let duration = t_out - t_in;
        let (cmetric, threads_av, triggered) = if duration == 0 {
            (0.0, f64::from(count), false)
        } else {
            let thread_ns = global_nt - entry.local_nt;
            (
                global_cm.since(&entry.local_cm),
                thread_ns as f64 / duration as f64,
                gate.above_average(thread_ns, duration),
            )
        };

        let pending = std::mem::take(&mut entry.pending_samples);
        let (stack, samples) = if triggered {
            let stack: Vec<Addr> = prev_stack
                .map(|s| s.iter().take(cfg.stack_depth).copied().collect())
                .unwrap_or_default();
            let mut samples: Vec<SampleEntry> = pending
                .into_iter()
                .map(|ip| SampleEntry {
                    ip,
                    provenance: Provenance::Sample,
                })
                .collect();
            if samples.is_empty() && gate.at_least_count(count) {
                if let Some(&top) = stack.first() {
                    samples.push(SampleEntry {
                        ip: top,
                        provenance: Provenance::StackTop,
                    });
                }
            }
            (stack, samples)
        } else {
            (Vec::new(), Vec::new())
        };

        *self.cm_hash.entry(tid).or_insert(0.0) += cmetric;
        self.ts_counter += 1;
        TimesliceRecord {
            ts_id: self.ts_counter,
            tid,
            t_in,
            t_out,
            cmetric,
            threads_av,
            triggered,
            stack,
            samples,
            thread_count_at_switchout: count,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReplayStats {
    pub total_slices: u64,
    pub critical_slices: u64,
    pub cm_hash: BTreeMap<Tid, f64>,
    pub first_ts: Option<Nanos>,
    pub last_ts: Option<Nanos>,
}

impl ReplayStats {
    /// Critical slices over all slices; zero when there are none.
    pub fn cr(&self) -> f64 {
        if self.total_slices == 0 {
            0.0
        } else {
            self.critical_slices as f64 / self.total_slices as f64
        }
    }

    pub fn span(&self) -> Nanos {
        match (self.first_ts, self.last_ts) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

/// Streaming driver around [`EngineState`].
#[derive(Clone, Debug)]
pub struct Replay {
    state: EngineState,
    cfg: Config,
    index: usize,
    stats: ReplayStats,
}

impl Replay {
    pub fn new(cfg: Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Replay {
            state: EngineState::new(),
            cfg,
            index: 0,
            stats: ReplayStats::default(),
        })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    fn count(&mut self, record: &TimesliceRecord) {
        self.stats.total_slices += 1;
        if record.triggered {
            self.stats.critical_slices += 1;
        }
    }

    pub fn apply(&mut self, ev: &TraceEvent) -> Result<Option<TimesliceRecord>, ReplayError> {
        let index = self.index;
        self.index += 1;
        let record = self
            .state
            .apply_event(ev, &self.cfg)
            .map_err(|source| ReplayError::Consistency { index, source })?;
        self.stats.first_ts.get_or_insert(ev.ts());
        self.stats.last_ts = Some(ev.ts());
        if let Some(r) = &record {
            self.count(r);
        }
        Ok(record)
    }

    /// Closes slices still open at the final timestamp and returns them with
    /// the run statistics.
    pub fn finish(mut self) -> (Vec<TimesliceRecord>, ReplayStats) {
        let mut tail = Vec::new();
        if let Some(end) = self.stats.last_ts {
            for tid in self.state.running_threads() {
                let record = self.state.close_timeslice(tid, end, None, &self.cfg);
                self.count(&record);
                tail.push(record);
            }
        }
        self.stats.cm_hash = self.state.cm_hash.clone();
        (tail, self.stats)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReplayOutput {
    pub records: Vec<TimesliceRecord>,
    pub stats: ReplayStats,
}

pub fn run_replay(events: &[TraceEvent], cfg: &Config) -> Result<ReplayOutput, ReplayError> {
    let mut replay = Replay::new(*cfg)?;
    let mut records = Vec::new();
    for ev in events {
        if let Some(r) = replay.apply(ev)? {
            records.push(r);
        }
    }
    let (tail, stats) = replay.finish();
    records.extend(tail);
    Ok(ReplayOutput { records, stats })
}
