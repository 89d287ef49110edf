use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use output::Output;

/// Numerical experiments for dispersive estimates of hyperbolic equations with time-dependent coefficients.
#[derive(Parser)]
#[command(name = "dispersa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving CSV, JSON and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Seed for randomized sampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 gives bit-reproducible output, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Integration tolerance overriding the subcommand default.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Characteristic roots, separation and root-derivative checks.
    Roots,
    /// Asymptotic integration profiles and error-bound report.
    Asymint,
    /// Contact-order indices of a phase level set.
    Sugimoto,
    /// Decay experiment for the Cauchy problem.
    Decay,
    /// Envelope fit of a model oscillatory integral.
    Vdc,
    /// Windowed dispersive kernel of the solution operator.
    Kernel,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Roots => "roots",
            Command::Asymint => "asymint",
            Command::Sugimoto => "sugimoto",
            Command::Decay => "decay",
            Command::Vdc => "vdc",
            Command::Kernel => "kernel",
        }
    }
}

/// Settings shared by every subcommand.
pub struct Run {
    pub config: config::Loaded,
    pub seed: u64,
    pub tol: Option<f64>,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli.config.as_ref().context("--config is required")?;
    let loaded = config::Loaded::read(path)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    let mut out = Output::create(&cli.out_dir)?;
    let ctx = Run { config: loaded, seed: cli.seed, tol: cli.tol };
    pool.install(|| match cli.command {
        Command::Roots => commands::roots::run(&ctx, &mut out),
        Command::Asymint => commands::asymint::run(&ctx, &mut out),
        Command::Sugimoto => commands::sugimoto::run(&ctx, &mut out),
        Command::Decay => commands::decay::run(&ctx, &mut out),
        Command::Vdc => commands::vdc::run(&ctx, &mut out),
        Command::Kernel => commands::kernel::run(&ctx, &mut out),
    })?;
    out.manifest(cli.command.name(), &ctx)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<dispersa::Error>().map_or(1, |d| d.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
