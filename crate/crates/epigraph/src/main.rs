use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epigraph::commands::{self, Format, Options};

#[derive(Parser)]
#[command(name = "epigraph", version, about = "Epidemics on movement graphs: chains, simulation, ODEs, checks and fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the movement chain(s) of a graph file and report diagnostics.
    Mcmc(Flags),
    /// Run a scenario: stochastic chains, agents, ODEs or forecasts.
    Run(Flags),
    /// Run a statistical verification sweep.
    Verify(Flags),
    /// Fit model parameters to a case series.
    Fit(Flags),
}

#[derive(Args)]
struct Flags {
    /// Input JSON (graph, scenario, sweep or fit spec).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent stochastic replicas, run in parallel.
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Case CSV for `fit`.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl From<Flags> for Options {
    fn from(f: Flags) -> Self {
        Options {
            config: f.config,
            seed: f.seed,
            replicas: f.replicas,
            out_dir: f.out_dir,
            format: f.format,
            data: f.data,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Mcmc(f) => commands::mcmc(&f.into()),
        Command::Run(f) => commands::run(&f.into()),
        Command::Verify(f) => commands::verify(&f.into()),
        Command::Fit(f) => commands::fit(&f.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
