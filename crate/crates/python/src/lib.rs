//! Python bindings: traces, symbol maps, replay, analysis, oracle and the
//! synthetic scenario generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use cmprof_core::analysis::{self, DEFAULT_TOP_N};
use cmprof_core::engine::{self, NMin, DEFAULT_SAMPLE_PERIOD, DEFAULT_STACK_DEPTH};
use cmprof_core::oracle;
use cmprof_core::report::{render_json, render_text};
use cmprof_core::synth::{self, Scenario};
use cmprof_core::trace::{self as model, Nanos, TraceEvent};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn os_err(path: &str, e: std::io::Error) -> PyErr {
    PyOSError::new_err(format!("{path}: {e}"))
}

fn by_tid(map: &BTreeMap<model::Tid, f64>) -> BTreeMap<u32, f64> {
    map.iter().map(|(t, v)| (t.0, *v)).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated-on-demand list of scheduler events.
#[pyclass(module = "cmprof", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Trace {
    events: Vec<TraceEvent>,
}

#[pymethods]
impl Trace {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| os_err(path, e))?;
        let events = model::read_trace(BufReader::new(file)).map_err(value_err)?;
        Ok(Trace { events })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let events = model::read_trace(text.as_bytes()).map_err(value_err)?;
        Ok(Trace { events })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        model::write_trace(&mut buf, &self.events).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| os_err(path, e))
    }

    /// Checks structural validity; returns event counts and thread ids.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let stats = model::validate_trace(&self.events).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("switches", stats.switches)?;
        d.set_item("wakeups", stats.wakeups)?;
        d.set_item("samples", stats.samples)?;
        d.set_item(
            "threads",
            stats.app_tids.iter().map(|t| t.0).collect::<Vec<_>>(),
        )?;
        d.set_item("notes", stats.notes.len())?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.events.len()
    }

    fn __repr__(&self) -> String {
        format!("Trace({} events)", self.events.len())
    }
}

/// Address ranges mapped to function, file and line.
#[pyclass(module = "cmprof", frozen, skip_from_py_object)]
#[derive(Clone)]
struct SymbolMap {
    inner: cmprof_core::SymbolMap,
}

#[pymethods]
impl SymbolMap {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| os_err(path, e))?;
        let inner = cmprof_core::SymbolMap::read(BufReader::new(file)).map_err(value_err)?;
        Ok(SymbolMap { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut buf = Vec::new();
        self.inner.write(&mut buf).map_err(value_err)?;
        std::fs::write(path, buf).map_err(|e| os_err(path, e))
    }

    fn lookup(&self, addr: u64) -> Option<(String, String, u32)> {
        self.inner
            .lookup(addr)
            .map(|l| (l.function.to_owned(), l.file.to_owned(), l.line))
    }

    fn __len__(&self) -> usize {
        self.inner.entries().len()
    }
}

/// Replay parameters. `n_min=None` means half the live threads.
#[pyclass(module = "cmprof", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: engine::Config,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (n_min=None, stack_depth=DEFAULT_STACK_DEPTH, sample_period=DEFAULT_SAMPLE_PERIOD))]
    fn new(n_min: Option<u32>, stack_depth: usize, sample_period: Nanos) -> PyResult<Self> {
        let inner = engine::Config {
            n_min: n_min.map_or(NMin::HalfTotal, NMin::Fixed),
            stack_depth,
            sample_period,
        };
        inner.validate().map_err(value_err)?;
        Ok(Config { inner })
    }

    #[getter]
    fn n_min(&self) -> Option<u32> {
        match self.inner.n_min {
            NMin::Fixed(k) => Some(k),
            NMin::HalfTotal => None,
        }
    }

    #[getter]
    fn stack_depth(&self) -> usize {
        self.inner.stack_depth
    }

    #[getter]
    fn sample_period(&self) -> Nanos {
        self.inner.sample_period
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_min={}, stack_depth={}, sample_period={})",
            self.n_min().map_or("None".into(), |k| k.to_string()),
            self.inner.stack_depth,
            self.inner.sample_period
        )
    }
}

fn config_or_default(cfg: Option<&Config>) -> engine::Config {
    cfg.map(|c| c.inner).unwrap_or_default()
}

#[pyclass(module = "cmprof", frozen, get_all)]
struct ReplayResult {
    /// Per-thread CMetric in ns, keyed by tid.
    cmetric: BTreeMap<u32, f64>,
    total_slices: u64,
    critical_slices: u64,
    cr: f64,
    records_json: String,
}

#[pymethods]
impl ReplayResult {
    /// Timeslice records as a list of dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.records_json)
    }
}

#[pyfunction]
#[pyo3(signature = (trace, config=None))]
fn replay(trace: &Trace, config: Option<&Config>) -> PyResult<ReplayResult> {
    let out = engine::run_replay(&trace.events, &config_or_default(config)).map_err(value_err)?;
    Ok(ReplayResult {
        cmetric: by_tid(&out.stats.cm_hash),
        total_slices: out.stats.total_slices,
        critical_slices: out.stats.critical_slices,
        cr: out.stats.cr(),
        records_json: serde_json::to_string(&out.records).map_err(value_err)?,
    })
}

#[pyclass(module = "cmprof", frozen, get_all)]
struct Analysis {
    cmetric: BTreeMap<u32, f64>,
    total_slices: u64,
    critical_slices: u64,
    cr: f64,
    text: String,
    json: String,
}

#[pymethods]
impl Analysis {
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.json)
    }
}

#[pyfunction]
#[pyo3(signature = (trace, symbols=None, config=None, top=DEFAULT_TOP_N))]
fn analyze(
    trace: &Trace,
    symbols: Option<&SymbolMap>,
    config: Option<&Config>,
    top: usize,
) -> PyResult<Analysis> {
    let empty = cmprof_core::SymbolMap::default();
    let symbols = symbols.map_or(&empty, |s| &s.inner);
    let a = analysis::analyze(&trace.events, symbols, &config_or_default(config), top)
        .map_err(value_err)?;
    Ok(Analysis {
        cmetric: by_tid(&a.stats.cm_hash),
        total_slices: a.stats.total_slices,
        critical_slices: a.stats.critical_slices,
        cr: a.stats.cr(),
        text: render_text(&a.report),
        json: render_json(&a.report),
    })
}

/// Per-thread CMetric from direct interval enumeration.
#[pyfunction]
#[pyo3(name = "oracle")]
fn oracle_cmetric(trace: &Trace) -> PyResult<BTreeMap<u32, f64>> {
    oracle::oracle_cmetric(&trace.events)
        .map(|m| by_tid(&m))
        .map_err(value_err)
}

/// The hand-checked two-thread trace.
#[pyfunction]
fn trace_a() -> Trace {
    Trace {
        events: cmprof_core::fixtures::trace_a(),
    }
}

#[pyclass(module = "cmprof", frozen)]
struct Synthesis {
    inner: synth::Synthesis,
}

#[pymethods]
impl Synthesis {
    #[getter]
    fn trace(&self) -> Trace {
        Trace {
            events: self.inner.trace.clone(),
        }
    }

    #[getter]
    fn symbols(&self) -> SymbolMap {
        SymbolMap {
            inner: self.inner.symbols.clone(),
        }
    }

    /// Expected per-thread CMetric, slice counts, CR and top path.
    #[pyo3(signature = (config=None))]
    fn truth<'py>(&self, py: Python<'py>, config: Option<&Config>) -> PyResult<Bound<'py, PyAny>> {
        let cfg = config_or_default(config);
        let text = serde_json::to_string(&self.inner.truth_file(cfg.n_min, cfg.stack_depth))
            .map_err(value_err)?;
        json_to_py(py, &text)
    }

    fn __repr__(&self) -> String {
        format!(
            "Synthesis({}, {} events)",
            self.inner.scenario,
            self.inner.trace.len()
        )
    }
}

fn build(s: Scenario, seed: u64, cpus: Option<u32>, sample_period: Nanos) -> PyResult<Synthesis> {
    let mut s = s.seed(seed).sample_period(sample_period);
    if let Some(c) = cpus {
        s = s.cpus(c);
    }
    let inner = synth::generate(&s).map_err(value_err)?;
    Ok(Synthesis { inner })
}

#[pyfunction]
#[pyo3(signature = (threads, parallel_ns, serial_ns, *, seed=0, cpus=None, sample_period=DEFAULT_SAMPLE_PERIOD))]
fn serial_phase(
    threads: u32,
    parallel_ns: Nanos,
    serial_ns: Nanos,
    seed: u64,
    cpus: Option<u32>,
    sample_period: Nanos,
) -> PyResult<Synthesis> {
    build(
        Scenario::serial_phase(threads, parallel_ns, serial_ns),
        seed,
        cpus,
        sample_period,
    )
}

#[pyfunction]
#[pyo3(signature = (threads, work_ns, *, seed=0, cpus=None, sample_period=DEFAULT_SAMPLE_PERIOD))]
fn balanced(
    threads: u32,
    work_ns: Nanos,
    seed: u64,
    cpus: Option<u32>,
    sample_period: Nanos,
) -> PyResult<Synthesis> {
    build(
        Scenario::balanced(threads, work_ns),
        seed,
        cpus,
        sample_period,
    )
}

#[pyfunction]
#[pyo3(signature = (threads, critical_ns, work_ns, rounds, *, seed=0, cpus=None, sample_period=DEFAULT_SAMPLE_PERIOD))]
fn lock_convoy(
    threads: u32,
    critical_ns: Nanos,
    work_ns: Nanos,
    rounds: u32,
    seed: u64,
    cpus: Option<u32>,
    sample_period: Nanos,
) -> PyResult<Synthesis> {
    build(
        Scenario::lock_convoy(threads, critical_ns, work_ns, rounds),
        seed,
        cpus,
        sample_period,
    )
}

#[pyfunction]
#[pyo3(signature = (stages, service_ns, items, *, seed=0, cpus=None, sample_period=DEFAULT_SAMPLE_PERIOD))]
fn pipeline(
    stages: Vec<u32>,
    service_ns: Vec<Nanos>,
    items: u32,
    seed: u64,
    cpus: Option<u32>,
    sample_period: Nanos,
) -> PyResult<Synthesis> {
    build(
        Scenario::pipeline(stages, service_ns, items),
        seed,
        cpus,
        sample_period,
    )
}

#[pymodule]
pub fn cmprof(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trace>()?;
    m.add_class::<SymbolMap>()?;
    m.add_class::<Config>()?;
    m.add_class::<ReplayResult>()?;
    m.add_class::<Analysis>()?;
    m.add_class::<Synthesis>()?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_cmetric, m)?)?;
    m.add_function(wrap_pyfunction!(trace_a, m)?)?;
    m.add_function(wrap_pyfunction!(serial_phase, m)?)?;
    m.add_function(wrap_pyfunction!(balanced, m)?)?;
    m.add_function(wrap_pyfunction!(lock_convoy, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline, m)?)?;
    Ok(())
}
