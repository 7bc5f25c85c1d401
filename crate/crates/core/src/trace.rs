//! Event vocabulary, the JSON Lines trace format, and trace validation.
//!
//! Every line of a trace file is one JSON object tagged by `"ev"`. On output
//! the keys are emitted as `ev`, `ts`, then the remaining keys in
//! alphabetical order, so a serialized trace is byte-stable:
//!
//! ```text
//! #cmprof-trace v1
//! {"ev":"new","ts":0,"tid":1,"comm":"worker"}
//! {"ev":"switch","ts":0,"cpu":0,"next":1,"prev":0,"prev_state":"R"}
//! {"ev":"sample","ts":150,"ip":4096,"tid":1}
//! {"ev":"wakeup","ts":150,"tid":2}
//! {"ev":"exit","ts":300,"tid":1}
//! ```
//!
//! `new` is the one exception to alphabetical order (`tid` before `comm`),
//! kept for readability.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Nanoseconds on the trace's monotonic clock.
pub type Nanos = u64;

/// A code address (instruction pointer or return address).
pub type Addr = u64;

/// Header line written at the top of every trace file.
pub const TRACE_HEADER: &str = "#cmprof-trace v1";

/// Thread identifier. `Tid(0)` stands for idle or non-application work.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tid(pub u32);

impl Tid {
    pub const IDLE: Tid = Tid(0);

    pub fn is_idle(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Tid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for Tid {
    fn from(v: u32) -> Self {
        Tid(v)
    }
}

/// State a thread is left in when it is switched out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrevState {
    /// Preempted while still runnable.
    Runnable,
    /// Sleeping, waiting, or otherwise inactive.
    Blocked,
}

impl PrevState {
    pub fn code(self) -> &'static str {
        match self {
            PrevState::Runnable => "R",
            PrevState::Blocked => "B",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    TaskNew {
        ts: Nanos,
        tid: Tid,
        comm: String,
    },
    TaskExit {
        ts: Nanos,
        tid: Tid,
    },
    SchedSwitch {
        ts: Nanos,
        cpu: u32,
        prev_tid: Tid,
        prev_state: PrevState,
        next_tid: Tid,
        /// Stack of the outgoing thread, innermost return address first.
        prev_stack: Option<Vec<Addr>>,
    },
    SchedWakeup {
        ts: Nanos,
        tid: Tid,
    },
    Sample {
        ts: Nanos,
        tid: Tid,
        ip: Addr,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    TaskNew,
    TaskExit,
    SchedSwitch,
    SchedWakeup,
    Sample,
}

impl EventKind {
    pub fn tag(self) -> &'static str {
        match self {
            EventKind::TaskNew => "new",
            EventKind::TaskExit => "exit",
            EventKind::SchedSwitch => "switch",
            EventKind::SchedWakeup => "wakeup",
            EventKind::Sample => "sample",
        }
    }
}

impl TraceEvent {
    pub fn ts(&self) -> Nanos {
        match self {
            TraceEvent::TaskNew { ts, .. }
            | TraceEvent::TaskExit { ts, .. }
            | TraceEvent::SchedSwitch { ts, .. }
            | TraceEvent::SchedWakeup { ts, .. }
            | TraceEvent::Sample { ts, .. } => *ts,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            TraceEvent::TaskNew { .. } => EventKind::TaskNew,
            TraceEvent::TaskExit { .. } => EventKind::TaskExit,
            TraceEvent::SchedSwitch { .. } => EventKind::SchedSwitch,
            TraceEvent::SchedWakeup { .. } => EventKind::SchedWakeup,
            TraceEvent::Sample { .. } => EventKind::Sample,
        }
    }
}

/// Why a single trace line could not be turned into an event.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("record must be a JSON object")]
    NotObject,
    #[error("missing field \"{0}\"")]
    MissingField(&'static str),
    #[error("field \"{field}\" must be {expected}")]
    InvalidField {
        field: &'static str,
        expected: &'static str,
    },
    #[error("unknown event tag \"{0}\"")]
    UnknownEvent(String),
}

impl FieldError {
    /// Name of the offending field, when there is one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            FieldError::MissingField(f) => Some(f),
            FieldError::InvalidField { field, .. } => Some(field),
            FieldError::UnknownEvent(_) => Some("ev"),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: FieldError },
    #[error("line {line}: unsupported trace header \"{header}\"")]
    UnsupportedHeader { line: usize, header: String },
}

fn get_u64(obj: &Map<String, Value>, field: &'static str) -> Result<u64, FieldError> {
    let v = obj.get(field).ok_or(FieldError::MissingField(field))?;
    v.as_u64().ok_or(FieldError::InvalidField {
        field,
        expected: "a non-negative integer",
    })
}

fn get_tid(obj: &Map<String, Value>, field: &'static str) -> Result<Tid, FieldError> {
    let raw = get_u64(obj, field)?;
    u32::try_from(raw)
        .map(Tid)
        .map_err(|_| FieldError::InvalidField {
            field,
            expected: "a thread id below 2^32",
        })
}

fn get_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<&'a str, FieldError> {
    let v = obj.get(field).ok_or(FieldError::MissingField(field))?;
    v.as_str().ok_or(FieldError::InvalidField {
        field,
        expected: "a string",
    })
}

/// Parses one JSON Lines record into an event.
pub fn parse_event(line: &str) -> Result<TraceEvent, FieldError> {
    let value: Value =
        serde_json::from_str(line.trim()).map_err(|e| FieldError::InvalidJson(e.to_string()))?;
    let obj = value.as_object().ok_or(FieldError::NotObject)?;
    let tag = get_str(obj, "ev")?;
    let ts = get_u64(obj, "ts")?;
    let ev = match tag {
        "new" => TraceEvent::TaskNew {
            ts,
            tid: get_tid(obj, "tid")?,
            comm: get_str(obj, "comm")?.to_owned(),
        },
        "exit" => TraceEvent::TaskExit {
            ts,
            tid: get_tid(obj, "tid")?,
        },
        "switch" => {
            // thread ids first: they are what makes a switch meaningful
            let prev_tid = get_tid(obj, "prev")?;
            let next_tid = get_tid(obj, "next")?;
            let prev_state = match get_str(obj, "prev_state")? {
                "R" => PrevState::Runnable,
                "B" => PrevState::Blocked,
                _ => {
                    return Err(FieldError::InvalidField {
                        field: "prev_state",
                        expected: "\"R\" or \"B\"",
                    })
                }
            };
            let cpu = get_u64(obj, "cpu")?;
            let cpu = u32::try_from(cpu).map_err(|_| FieldError::InvalidField {
                field: "cpu",
                expected: "a cpu index below 2^32",
            })?;
            let prev_stack = match obj.get("stack") {
                None | Some(Value::Null) => None,
                Some(Value::Array(items)) => {
                    let mut stack = Vec::with_capacity(items.len());
                    for item in items {
                        stack.push(item.as_u64().ok_or(FieldError::InvalidField {
                            field: "stack",
                            expected: "an array of non-negative integers",
                        })?);
                    }
                    Some(stack)
                }
                Some(_) => {
                    return Err(FieldError::InvalidField {
                        field: "stack",
                        expected: "an array of non-negative integers",
                    })
                }
            };
            TraceEvent::SchedSwitch {
                ts,
                cpu,
                prev_tid,
                prev_state,
                next_tid,
                prev_stack,
            }
        }
        "wakeup" => TraceEvent::SchedWakeup {
            ts,
            tid: get_tid(obj, "tid")?,
        },
        "sample" => TraceEvent::Sample {
            ts,
            tid: get_tid(obj, "tid")?,
            ip: get_u64(obj, "ip")?,
        },
        other => return Err(FieldError::UnknownEvent(other.to_owned())),
    };
    Ok(ev)
}

/// Serializes an event as one JSON Lines record (no trailing newline).
pub fn serialize_event(ev: &TraceEvent) -> String {
    use std::fmt::Write as _;

    let mut out = String::with_capacity(64);
    let tag = ev.kind().tag();
    let _ = write!(out, "{{\"ev\":\"{tag}\",\"ts\":{}", ev.ts());
    match ev {
        TraceEvent::TaskNew { tid, comm, .. } => {
            let comm = Value::String(comm.clone()).to_string();
            let _ = write!(out, ",\"tid\":{tid},\"comm\":{comm}");
        }
        TraceEvent::TaskExit { tid, .. } | TraceEvent::SchedWakeup { tid, .. } => {
            let _ = write!(out, ",\"tid\":{tid}");
        }
        TraceEvent::SchedSwitch {
            cpu,
            prev_tid,
            prev_state,
            next_tid,
            prev_stack,
            ..
        } => {
            let _ = write!(
                out,
                ",\"cpu\":{cpu},\"next\":{next_tid},\"prev\":{prev_tid},\"prev_state\":\"{}\"",
                prev_state.code()
            );
            if let Some(stack) = prev_stack {
                out.push_str(",\"stack\":[");
                for (i, addr) in stack.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{addr}");
                }
                out.push(']');
            }
        }
        TraceEvent::Sample { tid, ip, .. } => {
            let _ = write!(out, ",\"ip\":{ip},\"tid\":{tid}");
        }
    }
    out.push('}');
    out
}

/// Reads a whole trace. Blank lines and `#` comment lines are skipped; a
/// `#cmprof-trace` header must name version `v1`.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if comment.starts_with("cmprof-trace") && trimmed != TRACE_HEADER {
                return Err(TraceError::UnsupportedHeader {
                    line: lineno,
                    header: trimmed.to_owned(),
                });
            }
            continue;
        }
        let ev = parse_event(trimmed).map_err(|source| TraceError::Parse {
            line: lineno,
            source,
        })?;
        events.push(ev);
    }
    Ok(events)
}

/// Writes the header line followed by one record per event.
pub fn write_trace<W: Write>(mut writer: W, events: &[TraceEvent]) -> std::io::Result<()> {
    writeln!(writer, "{TRACE_HEADER}")?;
    for ev in events {
        writeln!(writer, "{}", serialize_event(ev))?;
    }
    writer.flush()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TraceStats {
    pub switches: usize,
    pub wakeups: usize,
    pub news: usize,
    pub exits: usize,
    pub samples: usize,
    pub app_tids: BTreeSet<Tid>,
    pub first_ts: Option<Nanos>,
    pub last_ts: Option<Nanos>,
    /// Observations that do not invalidate the trace.
    pub notes: Vec<ValidationNote>,
}

impl TraceStats {
    pub fn total_events(&self) -> usize {
        self.switches + self.wakeups + self.news + self.exits + self.samples
    }

    pub fn span(&self) -> Nanos {
        match (self.first_ts, self.last_ts) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationNote {
    pub index: usize,
    pub tid: Tid,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("timestamp regression ({ts} after {prev})")]
    TimestampRegression { prev: Nanos, ts: Nanos },
    #[error("tid 0 is reserved and cannot be created")]
    IdleTaskNew,
    #[error("thread {0} created twice")]
    DuplicateTaskNew(Tid),
    #[error("thread {0} exits before it was created")]
    ExitBeforeNew(Tid),
    #[error("switch {role} thread {tid} was never created")]
    UnknownThread { role: &'static str, tid: Tid },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("event {index}: {violation}")]
pub struct ValidationError {
    pub index: usize,
    pub violation: Violation,
}

/// Checks ordering and thread-lifecycle rules, returning per-kind counts.
///
/// Wakeups and samples naming unknown threads are accepted (the replay
/// ignores them); switches must only name tid 0 or live application threads.
pub fn validate_trace(events: &[TraceEvent]) -> Result<TraceStats, ValidationError> {
    let mut stats = TraceStats::default();
    // live app threads and whether they are currently active
    let mut live: HashMap<Tid, bool> = HashMap::new();
    let mut last_ts: Option<Nanos> = None;

    let fail = |index, violation| Err(ValidationError { index, violation });

    for (index, ev) in events.iter().enumerate() {
        let ts = ev.ts();
        if let Some(prev) = last_ts {
            if ts < prev {
                return fail(index, Violation::TimestampRegression { prev, ts });
            }
        }
        last_ts = Some(ts);
        stats.first_ts.get_or_insert(ts);
        stats.last_ts = Some(ts);

        match ev {
            TraceEvent::TaskNew { tid, .. } => {
                stats.news += 1;
                if tid.is_idle() {
                    return fail(index, Violation::IdleTaskNew);
                }
                if live.insert(*tid, false).is_some() {
                    return fail(index, Violation::DuplicateTaskNew(*tid));
                }
                stats.app_tids.insert(*tid);
            }
            TraceEvent::TaskExit { tid, .. } => {
                stats.exits += 1;
                if live.remove(tid).is_none() {
                    return fail(index, Violation::ExitBeforeNew(*tid));
                }
            }
            TraceEvent::SchedSwitch {
                prev_tid,
                prev_state,
                next_tid,
                ..
            } => {
                stats.switches += 1;
                for (role, tid) in [("prev", *prev_tid), ("next", *next_tid)] {
                    if !tid.is_idle() && !live.contains_key(&tid) {
                        return fail(index, Violation::UnknownThread { role, tid });
                    }
                }
                if let Some(active) = live.get_mut(prev_tid) {
                    *active = *prev_state == PrevState::Runnable;
                }
                if let Some(active) = live.get_mut(next_tid) {
                    *active = true;
                }
            }
            TraceEvent::SchedWakeup { tid, .. } => {
                stats.wakeups += 1;
                if let Some(active) = live.get_mut(tid) {
                    if *active {
                        stats.notes.push(ValidationNote {
                            index,
                            tid: *tid,
                            message: "wakeup for an already-active thread; active count unchanged"
                                .to_owned(),
                        });
                    }
                    *active = true;
                }
            }
            TraceEvent::Sample { .. } => stats.samples += 1,
        }
    }
    Ok(stats)
}
