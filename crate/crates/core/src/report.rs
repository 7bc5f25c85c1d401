//! Symbolized bottleneck report, as plain text or JSON.
//!
//! Text layout per ranked path:
//!
//! ```text
//! Critical Path 1:
//! CMetric: 469 ns over 3 timeslices
//!
//! sync_array_reserve_cell() (sync0arr.cc:389)
//! <---rw_lock_s_lock_spin() (sync0rw.cc:402)
//!
//! Functions and lines + frequency
//! -------------------------------
//! sync_array_reserve_cell() -- 469
//!   sync0arr.cc:389 (StackTop) -- 469
//! ```
//!
//! followed by one summary block for the whole run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::aggregate::{PathAggregate, Summary};
use crate::engine::Provenance;
use crate::symbols::SymbolMap;
use crate::trace::Addr;

pub const REPORT_FORMAT: &str = "cmprof-report v1";

/// Formats nanoseconds with at most three decimals, dropping trailing zeros.
pub fn format_ns(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_owned()
    } else {
        s.to_owned()
    }
}

pub fn format_addr(addr: Addr) -> String {
    format!("{addr:#010x}")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameView {
    pub addr: Addr,
    pub function: Option<String>,
    pub file: Option<String>,
    pub line: Option<u32>,
}

impl FrameView {
    fn label(&self) -> String {
        match (&self.function, &self.file, self.line) {
            (Some(func), Some(file), Some(line)) => format!("{func}() ({file}:{line})"),
            (Some(func), _, _) => format!("{func}()"),
            _ => format_addr(self.addr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineView {
    /// `file:line`, or the raw address when unresolved.
    pub location: String,
    pub stack_top: bool,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FunctionView {
    /// Function name, or the raw address when unresolved.
    pub name: String,
    pub resolved: bool,
    pub total: u64,
    pub lines: Vec<LineView>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathView {
    pub rank: usize,
    pub total_cmetric_ns: f64,
    pub slice_count: u64,
    pub frames: Vec<FrameView>,
    pub functions: Vec<FunctionView>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub format: &'static str,
    pub paths: Vec<PathView>,
    pub summary: Summary,
}

fn path_view(rank: usize, agg: &PathAggregate, symbols: &SymbolMap) -> PathView {
    let frames = agg
        .path
        .0
        .iter()
        .map(|&addr| match symbols.lookup(addr) {
            Some(loc) => FrameView {
                addr,
                function: Some(loc.function.to_owned()),
                file: Some(loc.file.to_owned()),
                line: Some(loc.line),
            },
            None => FrameView {
                addr,
                function: None,
                file: None,
                line: None,
            },
        })
        .collect();

    // (resolved?, name) -> (location, stack_top) -> count
    let mut grouped: BTreeMap<(bool, String), BTreeMap<(String, bool), u64>> = BTreeMap::new();
    for (&(addr, provenance), &count) in &agg.addr_freq {
        let stack_top = provenance == Provenance::StackTop;
        let (key, location) = match symbols.lookup(addr) {
            Some(loc) => (
                (true, loc.function.to_owned()),
                format!("{}:{}", loc.file, loc.line),
            ),
            None => ((false, format_addr(addr)), format_addr(addr)),
        };
        *grouped
            .entry(key)
            .or_default()
            .entry((location, stack_top))
            .or_insert(0) += count;
    }

    let mut functions: Vec<FunctionView> = grouped
        .into_iter()
        .map(|((resolved, name), lines)| {
            let mut lines: Vec<LineView> = lines
                .into_iter()
                .map(|((location, stack_top), count)| LineView {
                    location,
                    stack_top,
                    count,
                })
                .collect();
            lines.sort_by_key(|l| std::cmp::Reverse(l.count));
            FunctionView {
                total: lines.iter().map(|l| l.count).sum(),
                name,
                resolved,
                lines,
            }
        })
        .collect();
    functions.sort_by_key(|f| std::cmp::Reverse(f.total));

    PathView {
        rank,
        total_cmetric_ns: agg.total_cmetric,
        slice_count: agg.slice_count,
        frames,
        functions,
    }
}

pub fn build_report(ranked: &[PathAggregate], symbols: &SymbolMap, summary: &Summary) -> Report {
    Report {
        format: REPORT_FORMAT,
        paths: ranked
            .iter()
            .enumerate()
            .map(|(i, agg)| path_view(i + 1, agg, symbols))
            .collect(),
        summary: summary.clone(),
    }
}

fn render_path(out: &mut String, path: &PathView) {
    let _ = writeln!(out, "Critical Path {}:", path.rank);
    let _ = writeln!(
        out,
        "CMetric: {} ns over {} timeslices",
        format_ns(path.total_cmetric_ns),
        path.slice_count
    );
    out.push('\n');
    if path.frames.is_empty() {
        out.push_str("<no stack>\n");
    }
    for (i, frame) in path.frames.iter().enumerate() {
        if i > 0 {
            out.push_str("<---");
        }
        out.push_str(&frame.label());
        out.push('\n');
    }
    out.push_str("\nFunctions and lines + frequency\n-------------------------------\n");
    if path.functions.is_empty() {
        out.push_str("(no samples)\n");
    }
    for func in &path.functions {
        let suffix = |stack_top: bool| if stack_top { " (StackTop)" } else { "" };
        if func.resolved {
            let _ = writeln!(out, "{}() -- {}", func.name, func.total);
            for line in &func.lines {
                let _ = writeln!(
                    out,
                    "  {}{} -- {}",
                    line.location,
                    suffix(line.stack_top),
                    line.count
                );
            }
        } else {
            for line in &func.lines {
                let _ = writeln!(
                    out,
                    "{}{} -- {}",
                    line.location,
                    suffix(line.stack_top),
                    line.count
                );
            }
        }
    }
    out.push('\n');
}

pub fn render_summary(out: &mut String, summary: &Summary) {
    out.push_str("Summary\n-------\n");
    let _ = writeln!(
        out,
        "{} timeslices, {} critical timeslices",
        summary.total_slices, summary.critical_slices
    );
    let _ = writeln!(out, "CR: {:.4} ({:.2}%)", summary.cr, summary.cr_percent);
    let _ = writeln!(out, "Distinct call paths: {}", summary.distinct_paths);
    let _ = writeln!(out, "Trace span: {} ns", summary.span_ns);
    out.push_str("\nPer-thread CMetric\n------------------\n");
    if summary.per_thread.is_empty() {
        out.push_str("(no application threads)\n");
    }
    for t in &summary.per_thread {
        let _ = writeln!(out, "tid {} -- {} ns", t.tid, format_ns(t.cmetric));
    }
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    for path in &report.paths {
        render_path(&mut out, path);
    }
    render_summary(&mut out, &report.summary);
    out
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Text rendering of ranked paths plus summary.
pub fn render_report(ranked: &[PathAggregate], symbols: &SymbolMap, summary: &Summary) -> String {
    render_text(&build_report(ranked, symbols, summary))
}
