use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};
use spectral_em_cli::config::parse_raw;
use spectral_em_cli::{run, RunError, Subcommand};

#[derive(Parser)]
#[command(name = "spectral-em", version, about = "Spectral-Galerkin Euler-Maruyama experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<u64>,
    #[arg(long, global = true)]
    iota: Option<f64>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Worker threads for path simulation; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(ClapSubcommand, Clone, Copy)]
enum Command {
    /// Weight sums against their 2 c_disc / lambda bound (weights.csv).
    CheckLemma,
    /// Sample paths of the recursive scheme (trajectory.csv).
    Simulate,
    /// Both sides of the maximal-regularity estimate (report.json).
    Maxreg,
    /// Exact second moments (moments.csv).
    Oracle,
    /// Non-uniform levels against the uniform scheme on coupled noise.
    CompareUniform,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::CheckLemma => Subcommand::CheckLemma,
            Command::Simulate => Subcommand::Simulate,
            Command::Maxreg => Subcommand::Maxreg,
            Command::Oracle => Subcommand::Oracle,
            Command::CompareUniform => Subcommand::CompareUniform,
        }
    }
}

fn execute(cli: &Cli) -> Result<String, RunError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?,
        None => String::new(),
    };
    let mut raw = parse_raw(&text)?;
    raw.seed = cli.seed.or(raw.seed);
    raw.paths = cli.paths.or(raw.paths);
    raw.iota = cli.iota.or(raw.iota);
    raw.out_dir = cli.out_dir.clone().or(raw.out_dir);
    raw.threads = cli.threads.or(raw.threads);
    let cfg = raw.validate()?;
    let summary = run(cli.command.into(), &cfg)?;
    Ok(format!("{} -> {}", summary.message, summary.out_dir.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let sub: Subcommand = cli.command.into();
    match execute(&cli) {
        Ok(line) => {
            println!("{}: {line}", sub.name());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json(Some(sub.name())));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
