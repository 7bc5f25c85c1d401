//! Small hand-checked traces shared by tests, examples and the CLI.

use crate::trace::{PrevState, Tid, TraceEvent};

fn switch(ts: u64, cpu: u32, prev: u32, state: PrevState, next: u32) -> TraceEvent {
    TraceEvent::SchedSwitch {
        ts,
        cpu,
        prev_tid: Tid(prev),
        prev_state: state,
        next_tid: Tid(next),
        prev_stack: None,
    }
}

/// Two threads on two CPUs. Thread 2 blocks at 100, is woken at 150 and
/// runs again from 200; both block at 300 and exit.
///
/// Active-thread counts: `[0,100)` 2, `[100,150)` 1, `[150,200)` 2 (thread 2
/// runnable), `[200,300)` 2. Thread 1's single slice therefore has CMetric
/// `100/2 + 50/1 + 50/2 + 100/2 = 175`, thread 2's two slices 50 each.
pub fn trace_a() -> Vec<TraceEvent> {
    use PrevState::Blocked;
    vec![
        TraceEvent::TaskNew {
            ts: 0,
            tid: Tid(1),
            comm: "worker".into(),
        },
        TraceEvent::TaskNew {
            ts: 0,
            tid: Tid(2),
            comm: "worker".into(),
        },
        switch(0, 0, 0, Blocked, 1),
        switch(0, 1, 0, Blocked, 2),
        switch(100, 1, 2, Blocked, 0),
        TraceEvent::SchedWakeup {
            ts: 150,
            tid: Tid(2),
        },
        switch(200, 1, 0, Blocked, 2),
        switch(300, 0, 1, Blocked, 0),
        switch(300, 1, 2, Blocked, 0),
        TraceEvent::TaskExit {
            ts: 300,
            tid: Tid(1),
        },
        TraceEvent::TaskExit {
            ts: 300,
            tid: Tid(2),
        },
    ]
}
