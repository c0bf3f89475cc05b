use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use restartlab::experiment::{evaluate_bounds, run_experiment, write_rows, ExperimentConfig, OutputFormat};
use restartlab::ext::format_ext;
use restartlab::oracle::oracle_report;
use restartlab::sched::StrategySpec;
use restartlab::wrap::{wrap, WrapOptions};
use restartlab::{DistSpec, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_EXHAUSTED: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "restartlab", version, about = "Restart strategies for Las Vegas algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the strategies of an experiment config and check its bounds.
    Simulate {
        config: PathBuf,
        /// Overrides the config's output format.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Overrides the config's output path.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the oracle report of a distribution (a file or inline JSON).
    Oracle { dist: String },
    /// Evaluate the bounds listed in a config without simulating.
    Bounds {
        config: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Print the first cutoffs of a strategy.
    Sequence {
        strategy: String,
        #[arg(short = 'n', long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a command under a restart strategy with wall-clock cutoffs.
    Wrap {
        #[arg(long)]
        strategy: String,
        /// Seconds per abstract time unit.
        #[arg(long)]
        unit: f64,
        #[arg(long, default_value_t = 100)]
        max_attempts: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Forward the output of killed attempts too.
        #[arg(long)]
        keep_output: bool,
        /// Restart when the command exits with a nonzero status.
        #[arg(long)]
        retry_nonzero: bool,
        /// Write the attempt log as JSON to this path.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(required = true, last = true)]
        command: Vec<String>,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Internal(_) | Error::Quadrature { .. } | Error::Csv(_) => EXIT_INTERNAL,
        _ => EXIT_USAGE,
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env()?;
    Ok(cfg)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(config: &Path, format: Option<Format>, output: Option<PathBuf>) -> Result<u8, Error> {
    let cfg = load_config(config)?;
    let rows = run_experiment(&cfg)?;
    let spec_out = cfg.output.clone();
    let format = format.map(OutputFormat::from).or(spec_out.as_ref().map(|o| o.format)).unwrap_or_default();
    let path = output.or(spec_out.and_then(|o| o.path));
    let mut out = open_output(path.as_deref())?;
    write_rows(&rows, format, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn oracle(dist: &str) -> Result<u8, Error> {
    let text = if dist.trim_start().starts_with('{') { dist.to_string() } else { std::fs::read_to_string(dist)? };
    let spec: DistSpec = serde_json::from_str(&text).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let report = oracle_report(&spec.build()?)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(0)
}

fn bounds(config: &Path, format: Option<Format>) -> Result<u8, Error> {
    let cfg = load_config(config)?;
    let rows = evaluate_bounds(&cfg)?;
    let mut out = open_output(None)?;
    write_rows(&rows, format.map(OutputFormat::from).unwrap_or_default(), &mut out)?;
    out.flush()?;
    Ok(0)
}

fn sequence(strategy: &str, count: u64, seed: u64) -> Result<u8, Error> {
    let spec: StrategySpec = strategy.parse()?;
    let strategy = spec.build()?;
    let randomized = strategy.is_randomized();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = strategy.schedule();
    let mut out = open_output(None)?;
    writeln!(out, "{}", if randomized { "k,sub_index,cutoff" } else { "k,cutoff" })?;
    for k in 0..count {
        let d = schedule.next(&mut rng);
        let cutoff = if d.saturated { "inf".to_string() } else { format_ext(d.cutoff) };
        if randomized {
            writeln!(out, "{k},{},{cutoff}", d.index)?;
        } else {
            writeln!(out, "{k},{cutoff}")?;
        }
    }
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Cmd::Simulate { config, format, output } => simulate(&config, format, output),
        Cmd::Oracle { dist } => oracle(&dist),
        Cmd::Bounds { config, format } => bounds(&config, format),
        Cmd::Sequence { strategy, count, seed } => sequence(&strategy, count, seed),
        Cmd::Wrap { strategy, unit, max_attempts, seed, keep_output, retry_nonzero, report, command } => {
            run_wrap(&strategy, unit, max_attempts, seed, keep_output, retry_nonzero, report.as_deref(), &command)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("restartlab: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_wrap(
    strategy: &str,
    unit: f64,
    max_attempts: u64,
    seed: u64,
    keep_output: bool,
    retry_nonzero: bool,
    report_path: Option<&Path>,
    command: &[String],
) -> Result<u8, Error> {
    let strategy = strategy.parse::<StrategySpec>()?.build()?;
    let opts = WrapOptions { unit_seconds: unit, max_attempts, seed, keep_output, retry_nonzero, ..WrapOptions::default() };
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let report = wrap(command, &strategy, &opts, &mut out, &mut err)?;
    out.flush()?;
    if let Some(p) = report_path {
        serde_json::to_writer_pretty(File::create(p)?, &report)?;
    }
    if !report.succeeded() {
        eprintln!("restartlab: no attempt finished within its cutoff after {} attempts", report.attempts.len());
        return Ok(EXIT_EXHAUSTED);
    }
    // pass the child's status through; statuses above 255 are clamped to the internal code
    Ok(report.exit_status.map(|c| u8::try_from(c).unwrap_or(EXIT_INTERNAL)).unwrap_or(0))
}
