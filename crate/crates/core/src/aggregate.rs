//! Post-processing of critical timeslices: call-path merging, top-N
//! selection and run summary.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::engine::{Provenance, ReplayStats, TimesliceRecord};
use crate::trace::{Addr, Nanos, Tid};

/// The truncated stack a critical slice was recorded with. Paths merge only
/// when element-wise identical; a prefix is a different path.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CallPathKey(pub Vec<Addr>);

impl CallPathKey {
    /// Slices recorded without a stack share this key.
    pub fn is_no_stack(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CallPathKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("<no stack>");
        }
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{a:#x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathAggregate {
    pub path: CallPathKey,
    pub total_cmetric: f64,
    pub slice_count: u64,
    pub addr_freq: BTreeMap<(Addr, Provenance), u64>,
}

impl PathAggregate {
    pub fn sample_total(&self) -> u64 {
        self.addr_freq.values().sum()
    }
}

/// Groups triggered records by call path. Members are folded in ascending
/// `ts_id` order so totals do not depend on input order.
pub fn merge_paths(records: &[TimesliceRecord]) -> BTreeMap<CallPathKey, PathAggregate> {
    let mut critical: Vec<&TimesliceRecord> = records.iter().filter(|r| r.triggered).collect();
    critical.sort_by(|a, b| {
        (a.ts_id, a.tid, a.t_in, a.t_out)
            .cmp(&(b.ts_id, b.tid, b.t_in, b.t_out))
            .then_with(|| a.cmetric.total_cmp(&b.cmetric))
    });

    let mut out: BTreeMap<CallPathKey, PathAggregate> = BTreeMap::new();
    for r in critical {
        let key = CallPathKey(r.stack.clone());
        let agg = out.entry(key.clone()).or_insert_with(|| PathAggregate {
            path: key,
            total_cmetric: 0.0,
            slice_count: 0,
            addr_freq: BTreeMap::new(),
        });
        agg.total_cmetric += r.cmetric;
        agg.slice_count += 1;
        for s in &r.samples {
            *agg.addr_freq.entry((s.ip, s.provenance)).or_insert(0) += 1;
        }
    }
    out
}

fn rank_order(a: &PathAggregate, b: &PathAggregate) -> Ordering {
    b.total_cmetric
        .total_cmp(&a.total_cmetric)
        .then_with(|| a.path.cmp(&b.path))
}

/// Highest total CMetric first; equal totals fall back to address order.
pub fn rank_top_n<'a, I>(aggs: I, n: usize) -> Vec<PathAggregate>
where
    I: IntoIterator<Item = &'a PathAggregate>,
{
    let mut all: Vec<PathAggregate> = aggs.into_iter().cloned().collect();
    all.sort_by(rank_order);
    all.truncate(n);
    all
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThreadCMetric {
    pub tid: Tid,
    pub cmetric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub total_slices: u64,
    pub critical_slices: u64,
    pub cr: f64,
    pub cr_percent: f64,
    /// Descending by CMetric, then by tid.
    pub per_thread: Vec<ThreadCMetric>,
    pub distinct_paths: usize,
    pub span_ns: Nanos,
}

pub fn compute_summary(
    stats: &ReplayStats,
    aggs: &BTreeMap<CallPathKey, PathAggregate>,
) -> Summary {
    let mut per_thread: Vec<ThreadCMetric> = stats
        .cm_hash
        .iter()
        .map(|(&tid, &cmetric)| ThreadCMetric { tid, cmetric })
        .collect();
    per_thread.sort_by(|a, b| b.cmetric.total_cmp(&a.cmetric).then(a.tid.cmp(&b.tid)));
    let cr = stats.cr();
    Summary {
        total_slices: stats.total_slices,
        critical_slices: stats.critical_slices,
        cr,
        cr_percent: cr * 100.0,
        per_thread,
        distinct_paths: aggs.len(),
        span_ns: stats.span(),
    }
}
