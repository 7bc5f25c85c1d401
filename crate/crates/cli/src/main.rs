use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmprof_core::analysis::{analyze, DEFAULT_TOP_N};
use cmprof_core::engine::{run_replay, Config, NMin, DEFAULT_SAMPLE_PERIOD, DEFAULT_STACK_DEPTH};
use cmprof_core::oracle::{compare_cmetrics, oracle_cmetric};
use cmprof_core::report::{format_ns, render_json, render_text};
use cmprof_core::symbols::SymbolMap;
use cmprof_core::synth::{generate, Scenario};
use cmprof_core::trace::{read_trace, validate_trace, write_trace, TraceEvent};
use log::{debug, info};

/// Offline critical-path profiler for scheduler traces.
#[derive(Parser)]
#[command(name = "cmprof", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and report the most critical call paths.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic trace, symbol map and ground truth.
    Synth(SynthArgs),
    /// Per-thread CMetric computed directly from the definition.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[arg(long)]
    symbols: Option<PathBuf>,
    /// Fixed parallelism threshold.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), conflicts_with = "nmin_half")]
    nmin: Option<u32>,
    /// Threshold of half the live application threads (the default).
    #[arg(long)]
    nmin_half: bool,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    top: usize,
    #[arg(long, default_value_t = DEFAULT_STACK_DEPTH as u64, value_parser = clap::value_parser!(u64).range(1..))]
    stack_depth: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Serial,
    Convoy,
    Pipeline,
    Balanced,
}

#[derive(Args)]
struct SynthArgs {
    kind: Kind,
    /// Defaults to 4, or the sum of `--stages` for a pipeline.
    #[arg(long)]
    threads: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the thread count.
    #[arg(long)]
    cpus: Option<u32>,
    #[arg(long, default_value_t = 100_000)]
    parallel_ns: u64,
    #[arg(long, default_value_t = 400_000)]
    serial_ns: u64,
    #[arg(long, default_value_t = 10_000)]
    critical_ns: u64,
    #[arg(long, default_value_t = 0)]
    work_ns: u64,
    #[arg(long, default_value_t = 3)]
    rounds: u32,
    /// Threads per pipeline stage.
    #[arg(long, value_delimiter = ',', default_value = "1,2,1")]
    stages: Vec<u32>,
    /// Service time per pipeline stage; one value applies to every stage.
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    service_ns: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    items: u32,
    #[arg(long, default_value_t = 100_000)]
    balanced_ns: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_PERIOD)]
    sample_period_ns: u64,
    /// Fixed threshold recorded in the truth file; half the threads otherwise.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    nmin: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    trace: PathBuf,
    /// Compare against the incremental engine.
    #[arg(long)]
    check: bool,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = File::open(path).with_context(|| format!("cannot open trace {}", path.display()))?;
    let events = read_trace(BufReader::new(file)).with_context(|| format!("{}", path.display()))?;
    let stats =
        validate_trace(&events).with_context(|| format!("{}: invalid trace", path.display()))?;
    for note in &stats.notes {
        debug!("event {}: {}", note.index, note.message);
    }
    info!(
        "{}: {} events, {} switches, {} samples, {} threads",
        path.display(),
        events.len(),
        stats.switches,
        stats.samples,
        stats.app_tids.len()
    );
    Ok(events)
}

fn load_symbols(path: &Path) -> Result<SymbolMap> {
    let file =
        File::open(path).with_context(|| format!("cannot open symbols {}", path.display()))?;
    SymbolMap::read(BufReader::new(file)).with_context(|| format!("{}", path.display()))
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<(), Failure> {
    let cfg = Config {
        n_min: args.nmin.map_or(NMin::HalfTotal, NMin::Fixed),
        stack_depth: args.stack_depth as usize,
        ..Config::default()
    };
    let events = load_trace(&args.trace)?;
    let symbols = match &args.symbols {
        Some(p) => load_symbols(p)?,
        None => SymbolMap::default(),
    };
    let a = analyze(&events, &symbols, &cfg, args.top).map_err(anyhow::Error::from)?;
    info!(
        "{} timeslices, {} critical, {} call paths",
        a.stats.total_slices,
        a.stats.critical_slices,
        a.paths.len()
    );
    let body = match args.format {
        Format::Text => render_text(&a.report),
        Format::Json => render_json(&a.report),
    };
    emit(args.out.as_deref(), &body)?;
    Ok(())
}

fn scenario(args: &SynthArgs) -> Scenario {
    let threads = args.threads.unwrap_or(4);
    let s = match args.kind {
        Kind::Serial => Scenario::serial_phase(threads, args.parallel_ns, args.serial_ns),
        Kind::Balanced => Scenario::balanced(threads, args.balanced_ns),
        Kind::Convoy => Scenario::lock_convoy(threads, args.critical_ns, args.work_ns, args.rounds),
        Kind::Pipeline => {
            let service = match args.service_ns.as_slice() {
                [one] => vec![*one; args.stages.len()],
                many => many.to_vec(),
            };
            let mut s = Scenario::pipeline(args.stages.clone(), service, args.items);
            if let Some(t) = args.threads {
                s.threads = t;
                s.cpus = t;
            }
            s
        }
    };
    let s = s.seed(args.seed).sample_period(args.sample_period_ns);
    match args.cpus {
        Some(c) => s.cpus(c),
        None => s,
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn synth_cmd(args: SynthArgs) -> Result<(), Failure> {
    let s = scenario(&args);
    let syn = generate(&s).map_err(usage)?;
    info!("{}: {} events", s, syn.trace.len());

    let trace_path = with_suffix(&args.out, ".jsonl");
    let mut w = create(&trace_path)?;
    write_trace(&mut w, &syn.trace)
        .and_then(|_| w.flush())
        .context("writing trace")?;

    let mut w = create(&with_suffix(&args.out, ".sym"))?;
    syn.symbols
        .write(&mut w)
        .and_then(|_| w.flush())
        .context("writing symbols")?;

    let n_min = args.nmin.map_or(NMin::HalfTotal, NMin::Fixed);
    let truth = syn.truth_file(n_min, DEFAULT_STACK_DEPTH);
    let mut body = serde_json::to_string_pretty(&truth).map_err(anyhow::Error::from)?;
    body.push('\n');
    emit(Some(&with_suffix(&args.out, ".truth.json")), &body)?;
    Ok(())
}

fn oracle_cmd(args: OracleArgs) -> Result<(), Failure> {
    let events = load_trace(&args.trace)?;
    let expected = oracle_cmetric(&events).map_err(anyhow::Error::from)?;
    let line = expected
        .iter()
        .map(|(tid, cm)| format!("{tid}: {}ns", format_ns(*cm)))
        .collect::<Vec<_>>()
        .join(", ");
    emit(None, &format!("{line}\n"))?;
    if args.check {
        let actual = run_replay(&events, &Config::default())
            .map_err(anyhow::Error::from)?
            .stats
            .cm_hash;
        let diverged = compare_cmetrics(&expected, &actual, 1e-9);
        if !diverged.is_empty() {
            let detail = diverged
                .iter()
                .map(|d| format!("tid {}: oracle {} engine {}", d.tid, d.expected, d.actual))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Failure {
                code: 3,
                error: anyhow::anyhow!("engine diverges from oracle: {detail}"),
            });
        }
        info!("engine agrees with oracle on {} threads", expected.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CMPROF_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cmprof: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
