//! Synthetic code layout: every logical function owns a fixed address
//! range, split into a few source lines.

use crate::symbols::{SymbolEntry, SymbolMap};
use crate::trace::Addr;

pub const CODE_BASE: Addr = 0x40_1000;
pub const FUNCTION_SIZE: Addr = 0x100;
pub const LINES_PER_FUNCTION: Addr = 4;
pub const SOURCE_FILE: &str = "workload.c";

/// Index of a function in a [`CodeLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct CodeLayout {
    names: Vec<String>,
}

impl CodeLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str) -> FuncId {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return FuncId(i);
        }
        self.names.push(name.to_owned());
        FuncId(self.names.len() - 1)
    }

    pub fn name(&self, f: FuncId) -> &str {
        &self.names[f.0]
    }

    pub fn base(&self, f: FuncId) -> Addr {
        // one unmapped function-sized gap between neighbours
        CODE_BASE + 2 * FUNCTION_SIZE * f.0 as Addr
    }

    pub fn range(&self, f: FuncId) -> std::ops::Range<Addr> {
        let b = self.base(f);
        b..b + FUNCTION_SIZE
    }

    /// A return address inside `f`.
    pub fn call_site(&self, f: FuncId, offset: Addr) -> Addr {
        self.base(f) + offset % FUNCTION_SIZE
    }

    pub fn symbol_map(&self) -> SymbolMap {
        let step = FUNCTION_SIZE / LINES_PER_FUNCTION;
        let mut entries = Vec::new();
        for (i, name) in self.names.iter().enumerate() {
            let base = self.base(FuncId(i));
            for l in 0..LINES_PER_FUNCTION {
                entries.push(SymbolEntry {
                    start: base + l * step,
                    end: base + (l + 1) * step,
                    function: name.clone(),
                    file: SOURCE_FILE.to_owned(),
                    line: (100 * (i as u32 + 1)) + l as u32,
                });
            }
        }
        SymbolMap::new(entries).expect("layout ranges are disjoint")
    }
}
