//! `varfrac` experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use varfrac::experiment::{run, ExperimentConfig};
use varfrac::operator::ApplyMode;
use varfrac::Error;

#[derive(Parser)]
#[command(name = "varfrac", version, about = "Variable-order fractional Laplacian experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write weight tables.
    Weights(Common),
    /// Operator error against the exact Gaussian image.
    ApplyConv(Common),
    /// Elliptic convergence table.
    Elliptic(Common),
    /// Time stepping with observer output and optional frames.
    Evolve(Common),
    /// Crank-Nicolson step timings and iteration counts.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ApplyMode>,
    /// Fixed interpolation rank (fast mode).
    #[arg(long)]
    rank: Option<usize>,
    /// FFT quadrature size for weight tables.
    #[arg(long)]
    quadrature: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ApplyMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Weights(c) => ("weights", c),
            Command::ApplyConv(c) => ("apply-convergence", c),
            Command::Elliptic(c) => ("elliptic", c),
            Command::Evolve(c) => ("evolve", c),
            Command::Bench(c) => ("bench", c),
        }
    }
}

enum Failure {
    Config(String),
    Solver(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_solver_failure() {
            return Failure::Solver(e.to_string());
        }
        match e {
            Error::Io(_)
            | Error::ImaginaryResidue { .. }
            | Error::PoleInB(_)
            | Error::RangeExceeded(_)
            | Error::SingularConstant(_)
            | Error::TailTooLarge { .. }
            | Error::QuadratureNonConvergent { .. }
            | Error::GridMismatch(_)
            | Error::SizeMismatch { .. }
            | Error::MissingWeights { .. }
            | Error::PlanMissing => Failure::Other(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

/// Reads the file and fills `kind` from the subcommand; a conflicting `kind` is an error.
fn load(path: &Path, kind: &str) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let given = table.get("kind").and_then(|v| v.as_str()).map(str::to_owned);
    match given.as_deref() {
        None => {
            table.insert("kind".into(), kind.into());
        }
        Some(k) if k == kind || (kind == "apply-convergence" && k == "apply-conv") => {}
        Some(k) => return Err(Failure::Config(format!("config kind {k:?} does not match subcommand {kind:?}"))),
    }
    table.try_into().map_err(|e: toml::de::Error| Failure::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    let (kind, c) = cli.command.parts();
    let mut cfg = load(&c.config, kind)?;
    if let Some(m) = c.mode {
        cfg.operator.mode = Some(m);
    }
    if let Some(r) = c.rank {
        cfg.operator.rank = Some(r);
        cfg.operator.rank_tol = None;
    }
    if let Some(m) = c.quadrature {
        cfg.operator.quadrature = Some(m);
    }
    if let Some(t) = c.threads {
        if t == 0 {
            return Err(Failure::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    Ok(run(&cfg, &c.out)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
