//! `ocvar`: solves, cross-checks and audits minimum-energy control problems
//! described by JSON problem files.

mod commands;
mod problem;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ocvar_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "ocvar", version, about = "Costate-free minimum-energy optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Costate-free shooting for the problem's boundary conditions.
    Solve(Common),
    /// Costate-free and costate shooting side by side.
    Compare(Common),
    /// Helmholtz conditions for the problem's multiplier at seeded samples.
    Helmholtz(Common),
    /// Hamiltonian and Noether-invariant drift along the optimal trajectory.
    Invariants(Common),
    /// Discrete Euler-Lagrange residuals at h and h/2.
    ElResidual(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    problem: PathBuf,
    /// Output file, written atomically; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Integration step, overrides the problem file.
    #[arg(long)]
    h: Option<f64>,
    /// Shooting tolerance, overrides the problem file.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn validation(e: CoreError) -> Self {
        CliError::Validation(e.to_string())
    }

    /// Input problems map to validation, failures inside a solve to
    /// non-convergence.
    pub fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::DimensionMismatch { .. }
            | CoreError::InvalidParams(_)
            | CoreError::Missing(_)
            | CoreError::NotConservative(_)
            | CoreError::TooShort { .. }
            | CoreError::NonUniformGrid
            | CoreError::GridMismatch => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

/// Writes via a temporary file in the target directory and renames it.
fn write_atomic(path: &Path, body: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(body.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

type Runner = fn(&problem::Loaded, u64, Format) -> Result<commands::Artifact, CliError>;

fn run(cli: Cli) -> Result<bool, CliError> {
    let (name, args, f): (&str, Common, Runner) = match cli.command {
        Command::Solve(a) => ("solve", a, commands::solve),
        Command::Compare(a) => ("compare", a, commands::compare),
        Command::Helmholtz(a) => ("helmholtz", a, commands::helmholtz),
        Command::Invariants(a) => ("invariants", a, commands::invariants),
        Command::ElResidual(a) => ("el-residual", a, commands::el_residual),
    };
    let loaded = problem::load(&args.problem, args.h, args.tol)?;
    let artifact = f(&loaded, args.seed, args.format)?;
    match &args.out {
        Some(path) => write_atomic(path, &artifact.body)?,
        None => std::io::stdout()
            .write_all(artifact.body.as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))?,
    }
    if !artifact.converged {
        eprintln!("{name}: shooting did not converge");
    }
    Ok(artifact.converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("ocvar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
