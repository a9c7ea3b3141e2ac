use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flexoct::cli_io::{load_spec_as, run, write_summary, Command, Overrides, Summary, DEFAULT_OUT};

/// Build, analyse and flex octahedra.
#[derive(Debug, Parser)]
#[command(name = "flexoct", version)]
struct Cli {
    /// build-type1, build-type1-mirror, build-type2, build-type3, classify, flex, verify or fourbar
    #[arg(value_parser = |s: &str| s.parse::<Command>())]
    command: Command,
    /// JSON job specification
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (overrides the spec)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum continuation steps
    #[arg(long)]
    steps: Option<usize>,
    /// Corrector tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads for sweeps
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let overrides = Overrides { out: cli.out.clone(), steps: cli.steps, tol: cli.tol };
    let spec = load_spec_as(&cli.spec, Some(cli.command)).and_then(|mut s| s.apply(&overrides).map(|_| s));
    let summary = match spec {
        Ok(spec) => run(&spec, cli.jobs),
        Err(e) => {
            let mut s = Summary::for_spec_error(&e);
            s.command = Some(cli.command.name().to_string());
            let out = cli.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            if let Err(io) = write_summary(&out, &s) {
                eprintln!("error: cannot write summary: {io}");
            }
            s
        }
    };
    if let Some(err) = &summary.error {
        eprintln!("{}: {}", err.kind, err.message);
    }
    ExitCode::from(summary.exit_code as u8)
}
