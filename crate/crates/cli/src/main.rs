use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fastslow_cli::commands::replay;
use fastslow_cli::{run, CliError, Command, RunConfig};

/// Numerical laboratory for fast-slow expanding circle maps.
#[derive(Parser)]
#[command(name = "fastslow", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV and the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Iterate the map and record the trajectory.
    Simulate(Common),
    /// Leading eigendata, averaged field and variance on a θ grid.
    Spectrum(Common),
    /// Averaged ODE, optionally against a Monte Carlo ensemble.
    Average(Common),
    /// Variance of the linearized deviation along the averaged path.
    Variance(Common),
    /// Rate function and stationary multiplier on a (θ, b) grid.
    RateTable(Common),
    /// Rate of a piecewise-linear path.
    PathRate(Common),
    /// Periodic-orbit averages and their hull.
    Domain(Common),
    /// Iterate a standard family under a weighted pushforward.
    Pairs(Common),
    /// Empirical moment generating function against its prediction.
    Mgf(Common),
    /// Local limit theorem histogram check.
    Llt(Common),
    /// Moderate-deviation probability probe.
    LdpProbe(Common),
    /// Growth of oscillatory transfer operators.
    DolgopyatScan(Common),
    /// Uniform non-integrability estimate.
    Uni(Common),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Cmd {
    fn split(&self) -> Option<(Command, &Common)> {
        Some(match self {
            Cmd::Simulate(c) => (Command::Simulate, c),
            Cmd::Spectrum(c) => (Command::Spectrum, c),
            Cmd::Average(c) => (Command::Average, c),
            Cmd::Variance(c) => (Command::Variance, c),
            Cmd::RateTable(c) => (Command::RateTable, c),
            Cmd::PathRate(c) => (Command::PathRate, c),
            Cmd::Domain(c) => (Command::Domain, c),
            Cmd::Pairs(c) => (Command::Pairs, c),
            Cmd::Mgf(c) => (Command::Mgf, c),
            Cmd::Llt(c) => (Command::Llt, c),
            Cmd::LdpProbe(c) => (Command::LdpProbe, c),
            Cmd::DolgopyatScan(c) => (Command::DolgopyatScan, c),
            Cmd::Uni(c) => (Command::Uni, c),
            Cmd::Replay { .. } => return None,
        })
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}"))),
        None => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let outcome = match cli.command.split() {
        Some((command, common)) => {
            set_threads(common.threads)?;
            let mut cfg = match &common.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            run(command, &cfg, &common.out)?
        }
        None => {
            let Cmd::Replay { manifest, out, threads } = &cli.command else { unreachable!() };
            set_threads(*threads)?;
            let text = std::fs::read_to_string(manifest)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest.display())))?;
            let value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
            replay(&value, out)?
        }
    };
    eprintln!("wrote {} and {}", outcome.artifacts.csv.display(), outcome.artifacts.manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    // clap prints usage and exits with 2 on unknown subcommands or flags.
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fastslow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
