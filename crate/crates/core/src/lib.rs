//! Offline serialization-bottleneck profiler.
//!
//! A scheduler trace (thread creation and exit, context switches, wakeups
//! and instruction-pointer samples) is replayed to compute, for every
//! on-CPU timeslice, its CMetric: the sum over the slice's switching
//! intervals of `interval_length / active_threads`. Slices whose average
//! parallelism drops below a threshold are critical; their call paths are
//! merged and ranked, and the hottest sampled addresses are symbolized into
//! a report.
//!
//! ```
//! use cmprof_core::{analysis::analyze, engine::Config, symbols::SymbolMap, synth};
//!
//! let syn = synth::generate(&synth::Scenario::serial_phase(4, 100_000, 400_000)).unwrap();
//! let out = analyze(&syn.trace, &syn.symbols, &Config::default(), 5).unwrap();
//! assert_eq!(out.stats.total_slices, 4);
//! ```

pub mod aggregate;
pub mod analysis;
pub mod engine;
pub mod fixtures;
pub mod oracle;
pub mod report;
pub mod symbols;
pub mod synth;
pub mod trace;

pub use aggregate::{CallPathKey, PathAggregate, Summary};
pub use engine::{Config, NMin, Provenance, ReplayStats, TimesliceRecord};
pub use symbols::SymbolMap;
pub use trace::{Tid, TraceEvent};
