use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use evcdr::harness::{self, ExperimentConfig, Format, ResultRow};
use evcdr::Error;

/// Environment variable overriding the worker thread count.
const THREADS_ENV: &str = "EVCDR_THREADS";

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "evcdr", version, about = "Echo-verified Clifford data regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one row per (step, estimator, realization).
    Run {
        config: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Defaults to the output file extension, else csv.
        #[arg(short, long, value_enum)]
        format: Option<FormatArg>,
        /// Replace the config seed.
        #[arg(short, long)]
        seed: Option<u64>,
    },
    /// Check a config file without simulating.
    Validate { config: PathBuf },
    /// Emit only the noiseless reference values for each step.
    Oracle {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long, value_enum)]
        format: Option<FormatArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_RUNTIME,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("{THREADS_ENV}: {e}")))
}

fn resolve_format(arg: Option<FormatArg>, output: Option<&Path>) -> Format {
    match arg {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::Json) => Format::Json,
        None => match output.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        },
    }
}

fn write_output(rows: &[ResultRow], output: Option<&Path>, format: Format) -> Result<(), Error> {
    match output {
        Some(path) => harness::emit_results(path, rows, format),
        None => {
            let mut buf = Vec::new();
            harness::write_rows(&mut buf, rows, format)?;
            std::io::stdout().lock().write_all(&buf)?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            output,
            format,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = harness::run_experiment(&cfg)?;
            for s in &out.skipped {
                match &s.variant {
                    Some(v) => eprintln!(
                        "warning: step {} realization {}: {v} skipped ({})",
                        s.step, s.realization, s.reason
                    ),
                    None => eprintln!(
                        "warning: step {} realization {} skipped ({})",
                        s.step, s.realization, s.reason
                    ),
                }
            }
            write_output(&out.rows, output.as_deref(), resolve_format(format, output.as_deref()))
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let model = cfg.ising_model()?;
            println!(
                "{}: ok ({} sites, {} edges, {} steps, {} realization(s), {} shots/basis)",
                config.display(),
                model.n_sites(),
                model.lattice.edges().len(),
                cfg.plan.steps,
                cfg.realizations,
                cfg.shots_per_basis()?
            );
            Ok(())
        }
        Command::Oracle {
            config,
            output,
            format,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = harness::run_oracle(&cfg)?;
            write_output(&rows, output.as_deref(), resolve_format(format, output.as_deref()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
