use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlwave::experiments::{emit_plot_data, run_experiment, ExperimentConfig, ExperimentKind, RunStatus};
use nlwave::Error;

#[derive(Parser)]
#[command(name = "nlwave", version, about = "Damped nonlocal wave experiments with exterior Dirichlet data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// INI config; defaults are used for anything it leaves out.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<kind>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides [experiment] seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run the invariant checks only; no result tables are written.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    Forward(RunArgs),
    Identities(RunArgs),
    Dn(RunArgs),
    Runge(RunArgs),
    InvertLinear(RunArgs),
    InvertSemilinear(RunArgs),
    Scan(RunArgs),
    /// Export one series of a finished run as x,y[,group] CSV.
    Plot {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long)]
        series: String,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e.root() {
        Error::Config(_) | Error::Domain(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_FAIL),
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> ExitCode {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path).and_then(|c| {
            if c.kind == kind {
                Ok(c)
            } else {
                Err(Error::Config(format!("{} is a '{}' config, not '{kind}'", path.display(), c.kind)))
            }
        }),
        None => Ok(ExperimentConfig::defaults(kind)),
    };
    let cfg = match cfg {
        Ok(c) => match args.seed {
            Some(s) => c.with_seed(s),
            None => c,
        },
        Err(e) => return exit_for(&e),
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    match run_experiment(&cfg, &out, args.check) {
        Ok(res) => {
            for c in &res.manifest.checks {
                let value = c.value.map_or("nan".to_string(), |v| format!("{v:.3e}"));
                println!("{:<4} {:<40} {value} (tolerance {:.3e})", if c.passed { "ok" } else { "FAIL" }, c.name, c.tolerance);
            }
            println!("{} -> {}", res.manifest.kind, res.manifest_path.display());
            if res.manifest.status == RunStatus::Pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => exit_for(&e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let kind = match cli.command {
        Command::Forward(a) => (ExperimentKind::Forward, a),
        Command::Identities(a) => (ExperimentKind::Identities, a),
        Command::Dn(a) => (ExperimentKind::Dn, a),
        Command::Runge(a) => (ExperimentKind::Runge, a),
        Command::InvertLinear(a) => (ExperimentKind::InvertLinear, a),
        Command::InvertSemilinear(a) => (ExperimentKind::InvertSemilinear, a),
        Command::Scan(a) => (ExperimentKind::Scan, a),
        Command::Plot { manifest, series } => {
            return match emit_plot_data(&manifest, &series) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
    };
    run(kind.0, kind.1)
}
