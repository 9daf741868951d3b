use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drate_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "drate", version, about = "Treatment effect estimation with missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "DRATE_THREADS")]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set scenario.n=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and its ground-truth sidecar.
    Simulate,
    /// Estimate the average treatment effect on a dataset CSV.
    Estimate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        form: Option<String>,
        /// Bootstrap replicates for a percentile interval.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Run a benchmark grid.
    Benchmark,
    /// Turn a results CSV into long-format plot data.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.output = cli.out;
    }
    if let Some(t) = cli.threads.or(cfg.threads) {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate => {
            let (data, truth) = commands::simulate(&cfg)?;
            println!("wrote {} and {}", data.display(), truth.display());
        }
        Command::Estimate {
            input,
            method,
            form,
            bootstrap,
        } => {
            if input.is_some() {
                cfg.input = input;
            }
            if let Some(m) = method {
                cfg.method.family = m;
            }
            if let Some(f) = form {
                cfg.method.form = f;
            }
            if let Some(b) = bootstrap {
                cfg.bootstrap.replicates = b;
            }
            let (record, path) = commands::estimate(&cfg)?;
            println!("{record}");
            println!("wrote {}", path.display());
        }
        Command::Benchmark => {
            for p in commands::benchmark(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Report { input } => {
            if input.is_some() {
                cfg.input = input;
            }
            for p in commands::report(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
