mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use litichain::sim::Event;
use litichain::workload::{load_trace_file, save_trace};
use litichain::{sample_trace, sweep, LifetimeTrace, Runner, SimError, SweepTable};
use thiserror::Error;

use config::{output_path, ConfigError, Resolved, TraceSource, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "litichain",
    version,
    about = "Finite-lifetime blockchain simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a lifetime trace and write it as CSV.
    Gen(SimArgs),
    /// Print lifetime statistics of a trace.
    Stats(SimArgs),
    /// Run the simulator at each configured point, sequentially.
    Run {
        #[command(flatten)]
        sim: SimArgs,
        /// Corrupt the base unit of this logical block right after insertion.
        #[arg(long, value_name = "INDEX")]
        tamper_group: Option<u64>,
        /// Write a per-event CSV log.
        #[arg(long, value_name = "PATH")]
        event_log: Option<PathBuf>,
    },
    /// Run the configured grid in parallel and write the results table.
    Sweep(SimArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct SimArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// plain, p or s; comma-separated for a grid.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Blockheight threshold; comma-separated for a grid.
    #[arg(long = "K", value_delimiter = ',', allow_negative_numbers = true)]
    pub k: Vec<i64>,
    /// Expansion factor; comma-separated for a grid.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub mu: Vec<i64>,
    /// Weight of a lightweight block relative to a regular one.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Proof-of-work difficulty in leading zero bits.
    #[arg(long, allow_negative_numbers = true)]
    pub difficulty: Option<i64>,
    /// Number of blocks to sample.
    #[arg(long, allow_negative_numbers = true)]
    pub n: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// fixed or poisson.
    #[arg(long)]
    pub arrival: Option<String>,
    /// Gap between arrivals for the fixed model.
    #[arg(long)]
    pub interval: Option<f64>,
    /// Arrival rate for the poisson model.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Lifetime mixture as MEAN:STDDEV:PROB, comma-separated.
    #[arg(long)]
    pub mixture: Option<String>,
    /// Floor applied to sampled lifetimes.
    #[arg(long)]
    pub min_lifetime: Option<f64>,
    /// Read the trace from this CSV instead of sampling one.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Output file; defaults to stdout, or a file under $LITICHAIN_OUT_DIR.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Directory for two-column plot data files.
    #[arg(long, value_name = "DIR")]
    pub plot_dir: Option<PathBuf>,
    /// Verify the whole chain every this many events (0: only at the end).
    #[arg(long, allow_negative_numbers = true)]
    pub verify_every: Option<i64>,
    /// Extend retention transitively along arrival-order links.
    #[arg(long)]
    pub cascading_retention: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(SimError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Sim(SimError::Verification { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Opens the output target: the explicit path, `default_name` under the
/// output directory, or stdout.
fn open_output(
    explicit: Option<&Path>,
    default_name: &str,
) -> Result<(Box<dyn Write>, String), CliError> {
    let path = match explicit {
        Some(p) => Some(p.to_owned()),
        None => std::env::var_os(OUT_DIR_ENV).map(|_| output_path(Path::new(default_name))),
    };
    match path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
            }
            let file =
                File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
            Ok((Box::new(BufWriter::new(file)), path.display().to_string()))
        }
        None => Ok((Box::new(io::stdout().lock()), "stdout".into())),
    }
}

fn load_trace(source: &TraceSource) -> Result<LifetimeTrace, CliError> {
    let trace = match source {
        TraceSource::File(path) => load_trace_file(path),
        TraceSource::Generate {
            mixture,
            n,
            arrival,
            seed,
        } => sample_trace(mixture, *n, *arrival, *seed),
    };
    trace.map_err(|e| CliError::Sim(SimError::Trace(e)))
}

fn cmd_gen(args: &SimArgs) -> Result<(), CliError> {
    if args.trace.is_some() {
        return Err(CliError::Usage(
            "gen samples a trace; --trace is not accepted".into(),
        ));
    }
    let cfg = config::resolve(args)?;
    let trace = load_trace(&cfg.trace)?;
    let (out, name) = open_output(cfg.out.as_deref(), "trace.csv")?;
    save_trace(&trace, out).map_err(|e| CliError::Sim(SimError::Trace(e)))?;
    eprintln!("wrote {} records to {name}", trace.len());
    Ok(())
}

fn cmd_stats(args: &SimArgs) -> Result<(), CliError> {
    let cfg = config::resolve(args)?;
    let trace = load_trace(&cfg.trace)?;
    let stats = trace
        .lifetime_stats()
        .ok_or_else(|| CliError::Usage("trace is empty".into()))?;
    let span = match (trace.records.first(), trace.records.last()) {
        (Some(a), Some(b)) => b.arrival - a.arrival,
        _ => 0.0,
    };
    println!("count {}", stats.count);
    println!("mean {:.3}", stats.mean);
    println!("stddev {:.3}", stats.stddev);
    println!("min {:.6}", stats.min);
    println!("max {:.6}", stats.max);
    println!("arrival_span {span:.6}");
    Ok(())
}

fn write_table(table: &SweepTable, cfg: &Resolved) -> Result<(), CliError> {
    let (out, name) = open_output(cfg.out.as_deref(), "results.csv")?;
    table.write_csv(out).map_err(|e| CliError::Io {
        context: format!("writing {name}"),
        source: e.into(),
    })?;
    if let Some(dir) = &cfg.plot_dir {
        let files = table
            .write_plot_data(dir)
            .map_err(io_err(format!("writing plot data to {}", dir.display())))?;
        eprintln!("wrote {} plot files to {}", files.len(), dir.display());
    }
    Ok(())
}

fn cmd_run(args: &SimArgs, tamper: Option<u64>, event_log: Option<&Path>) -> Result<(), CliError> {
    let cfg = config::resolve(args)?;
    let trace = load_trace(&cfg.trace)?;
    let mut log = match event_log {
        Some(path) => {
            let file =
                File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "run,event,time,kind,alive_units,mean_height,max_height")
                .map_err(io_err("writing event log"))?;
            Some(w)
        }
        None => None,
    };
    let mut results = Vec::new();
    for (i, params) in cfg.points().into_iter().enumerate() {
        let mut count = 0u64;
        let mut log_err = None;
        let mut runner = Runner::new(params);
        if let Some(g) = tamper {
            runner = runner.corrupt_after_insert(g);
        }
        if let Some(w) = log.as_mut() {
            runner = runner.observe(|chain, event| {
                count += 1;
                let kind = match event {
                    Event::Maintenance(_) => "maintenance",
                    Event::Arrival(_) => "arrival",
                };
                let (mean, max) = chain.height_stats();
                if let Err(e) = writeln!(
                    w,
                    "{i},{count},{},{kind},{},{mean},{max}",
                    event.time(),
                    chain.alive_units()
                ) {
                    log_err.get_or_insert(e);
                }
            });
        }
        let out = runner.run(&trace)?;
        if let Some(e) = log_err {
            return Err(io_err("writing event log")(e));
        }
        let r = &out.result;
        eprintln!(
            "variant={} K={} mu={} delta={} h_bar={:.3} m_bar={:.3} epsilon={} events={} verifications={}",
            r.variant, r.threshold, r.mu, r.delta_weighted, r.h_bar, r.m_bar, r.epsilon, r.events, r.verifications
        );
        results.push(out.result);
    }
    if let Some(mut w) = log {
        w.flush().map_err(io_err("writing event log"))?;
    }
    write_table(&SweepTable::from_results(results), &cfg)
}

fn cmd_sweep(args: &SimArgs) -> Result<(), CliError> {
    let cfg = config::resolve(args)?;
    let trace = load_trace(&cfg.trace)?;
    let table = sweep(&trace, &cfg.thresholds, &cfg.mus, &cfg.variants, &cfg.base)?;
    eprintln!("{} runs on {} blocks", table.rows.len(), trace.len());
    write_table(&table, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Run {
            sim,
            tamper_group,
            event_log,
        } => cmd_run(sim, *tamper_group, event_log.as_deref()),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
