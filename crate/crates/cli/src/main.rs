mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use run::Status;

const EXIT_ERROR: u8 = 1;
const EXIT_CERTIFICATE_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "fpk", version, about = "Galerkin Fokker-Planck-Kolmogorov experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config or a previously emitted manifest.
    Run {
        /// `config.toml`, or `*.manifest.json` to reproduce an earlier run.
        config: PathBuf,
        /// Output directory [default: the config's `out`, else ./results].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the particle backend.
        #[arg(long, env = "FPK_THREADS")]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version go to stdout with status 0; usage errors must
            // not collide with the certificate-failure status.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CertificateFailed) => ExitCode::from(EXIT_CERTIFICATE_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn execute(cli: Cli) -> Result<Status> {
    let Command::Run {
        config,
        out,
        seed,
        threads,
    } = cli.command;
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let out = out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let outcome = run::run(&cfg, &out)?;
    println!("{} {}: {}", cfg.experiment.name(), outcome.prefix, outcome.status.label());
    println!("manifest: {}", outcome.manifest.display());
    Ok(outcome.status)
}
