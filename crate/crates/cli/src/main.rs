use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sbdnet::commands::{self, HeuristicKind, Preset};
use sbdnet::config::LambdaSpec;
use sbdnet::{CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "sbdnet", version, about = "Stability experiments for multiclass wireless networks with interference")]
struct Cli {
    /// TOML experiment file; the built-in reference configuration when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the configured seed list by a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Rates as multiples of λ_c, comma separated; overrides the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda_rel: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical rate, its bounds and the lattice thresholds.
    LambdaC,
    /// Exact continuum simulation.
    Simulate,
    /// Lattice bounding-chain simulation.
    LatticeSim,
    /// Fluid limit of the upper lattice chain.
    Fluid,
    /// Mean-field fixed points.
    Heuristic {
        #[arg(value_enum)]
        kind: HeuristicArg,
    },
    /// Poisson-heuristic estimate of the critical rate.
    LambdaP,
    /// Rate × seed grid with stability verdicts.
    Sweep,
    /// Plot-ready tables for a standard experiment.
    Preset {
        #[arg(value_enum)]
        which: PresetArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeuristicArg {
    Poisson,
    Cavity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum PresetArg {
    FigPop,
    FigDelay,
    FigDensity,
    FigLambda,
}

impl Command {
    fn dir_name(&self) -> String {
        match self {
            Command::LambdaC => "lambda-c".into(),
            Command::Simulate => "simulate".into(),
            Command::LatticeSim => "lattice-sim".into(),
            Command::Fluid => "fluid".into(),
            Command::Heuristic { kind: HeuristicArg::Poisson } => "heuristic-poisson".into(),
            Command::Heuristic { kind: HeuristicArg::Cavity } => "heuristic-cavity".into(),
            Command::LambdaP => "lambda-p".into(),
            Command::Sweep => "sweep".into(),
            Command::Preset { which } => format!("{which:?}").to_lowercase().replace("fig", "fig-"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            eprintln!("no --config given; using the reference configuration");
            ExperimentConfig::reference()
        }
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(r) = cli.lambda_rel {
        cfg.lambda = LambdaSpec { absolute: None, relative: Some(r) };
    }
    cfg.validate()?;
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Schema(format!("--jobs: {e}")))?;
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.dir_name()));
    match cli.command {
        Command::LambdaC => commands::lambda_c(&cfg, &dir).map(|_| ()),
        Command::Simulate => commands::simulate_cmd(&cfg, &dir).map(|_| ()),
        Command::LatticeSim => commands::lattice_sim(&cfg, &dir).map(|_| ()),
        Command::Fluid => commands::fluid(&cfg, &dir).map(|_| ()),
        Command::Heuristic { kind } => {
            let kind = match kind {
                HeuristicArg::Poisson => HeuristicKind::Poisson,
                HeuristicArg::Cavity => HeuristicKind::Cavity,
            };
            commands::heuristic(&cfg, kind, &dir).map(|_| ())
        }
        Command::LambdaP => commands::lambda_p(&cfg, &dir).map(|_| ()),
        Command::Sweep => commands::sweep(&cfg, &dir).map(|_| ()),
        Command::Preset { which } => {
            let which = match which {
                PresetArg::FigPop => Preset::FigPop,
                PresetArg::FigDelay => Preset::FigDelay,
                PresetArg::FigDensity => Preset::FigDensity,
                PresetArg::FigLambda => Preset::FigLambda,
            };
            commands::preset(&cfg, which, &dir).map(|_| ())
        }
    }?;
    eprintln!("outputs in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
