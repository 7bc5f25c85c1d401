//! Address-range symbol table standing in for `addr2line`.
//!
//! The on-disk form is JSON Lines, one range per line:
//! `{"start":4096,"end":8192,"func":"f","file":"a.c","line":10}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Addr;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolEntry {
    pub start: Addr,
    /// Exclusive.
    pub end: Addr,
    #[serde(rename = "func")]
    pub function: String,
    pub file: String,
    pub line: u32,
}

/// Resolved location of an address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location<'a> {
    pub function: &'a str,
    pub file: &'a str,
    pub line: u32,
}

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("failed reading symbol map: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("range [{start:#x}, {end:#x}) for {function} is empty")]
    EmptyRange {
        start: Addr,
        end: Addr,
        function: String,
    },
    #[error("line number for {function} must be positive")]
    ZeroLine { function: String },
    #[error("ranges for {first} and {second} overlap")]
    Overlap { first: String, second: String },
}

/// Sorted, non-overlapping address ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolMap {
    entries: Vec<SymbolEntry>,
}

impl SymbolMap {
    /// Builds a map, sorting by start address and rejecting empty or
    /// overlapping ranges.
    pub fn new(mut entries: Vec<SymbolEntry>) -> Result<Self, SymbolError> {
        entries.sort_by_key(|e| (e.start, e.end));
        for e in &entries {
            if e.start >= e.end {
                return Err(SymbolError::EmptyRange {
                    start: e.start,
                    end: e.end,
                    function: e.function.clone(),
                });
            }
            if e.line == 0 {
                return Err(SymbolError::ZeroLine {
                    function: e.function.clone(),
                });
            }
        }
        for pair in entries.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(SymbolError::Overlap {
                    first: pair[0].function.clone(),
                    second: pair[1].function.clone(),
                });
            }
        }
        Ok(SymbolMap { entries })
    }

    pub fn entries(&self) -> &[SymbolEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the entry whose `[start, end)` range contains `addr`.
    pub fn lookup(&self, addr: Addr) -> Option<Location<'_>> {
        let idx = self.entries.partition_point(|e| e.start <= addr);
        let entry = self.entries[..idx].last()?;
        (addr < entry.end).then_some(Location {
            function: &entry.function,
            file: &entry.file,
            line: entry.line,
        })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, SymbolError> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let entry: SymbolEntry =
                serde_json::from_str(trimmed).map_err(|e| SymbolError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        SymbolMap::new(entries)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
            writeln!(writer, "{line}")?;
        }
        writer.flush()
    }
}

/// Free-function form of [`SymbolMap::lookup`].
pub fn lookup_address(map: &SymbolMap, addr: Addr) -> Option<Location<'_>> {
    map.lookup(addr)
}
