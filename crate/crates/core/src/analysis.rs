//! Replay, merge, rank and report in one call.

use std::collections::BTreeMap;

use crate::aggregate::{compute_summary, merge_paths, rank_top_n, CallPathKey, PathAggregate};
use crate::engine::{run_replay, Config, ReplayError, ReplayStats, TimesliceRecord};
use crate::report::{build_report, Report};
use crate::symbols::SymbolMap;
use crate::trace::TraceEvent;

pub const DEFAULT_TOP_N: usize = 5;

#[derive(Clone, Debug)]
pub struct Analysis {
    pub records: Vec<TimesliceRecord>,
    pub stats: ReplayStats,
    pub paths: BTreeMap<CallPathKey, PathAggregate>,
    pub report: Report,
}

pub fn analyze(
    events: &[TraceEvent],
    symbols: &SymbolMap,
    cfg: &Config,
    top_n: usize,
) -> Result<Analysis, ReplayError> {
    let out = run_replay(events, cfg)?;
    let paths = merge_paths(&out.records);
    let ranked = rank_top_n(paths.values(), top_n);
    let summary = compute_summary(&out.stats, &paths);
    let report = build_report(&ranked, symbols, &summary);
    Ok(Analysis {
        records: out.records,
        stats: out.stats,
        paths,
        report,
    })
}
