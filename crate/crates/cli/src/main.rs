//! `nae`: simulate data, train, export shape functions, verify the constructions
//! and sweep the variation penalty.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nae_core::data::SimKind;
use nae_core::theory::VerifyOptions;
use nae_core::NaeError;

#[derive(Parser, Debug)]
#[command(name = "nae", version, about = "Neural additive experts")]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Unimodal,
    Multimodal,
    Sparsity,
    Modality,
    Correlated,
    GenericInteraction,
}

impl From<Kind> for SimKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Unimodal => SimKind::Unimodal,
            Kind::Multimodal => SimKind::Multimodal,
            Kind::Sparsity => SimKind::Sparsity,
            Kind::Modality => SimKind::Modality,
            Kind::Correlated => SimKind::Correlated,
            Kind::GenericInteraction => SimKind::GenericInteraction,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset as CSV plus a JSON sidecar with its spec.
    Simulate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Noise level; 0.1 by default (0.01 for `modality`).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        minority_fraction: Option<f64>,
        #[arg(long)]
        cf: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Train from a run config; writes checkpoint, log and metrics to its output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-feature shape CSVs (and interaction grids with --pairs) from a checkpoint.
    ExportShapes {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with the checkpoint's feature columns.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature pair `i,j`; repeatable.
        #[arg(long = "pairs", value_parser = parse_pair)]
        pairs: Vec<(usize, usize)>,
        /// Grid points per continuous feature.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Build the exact constructions and check them on a grid.
    VerifyTheory {
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Offset added to every product gate's β.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        perturb: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train one model per λ with the config's other settings.
    SweepLambda {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, ascending.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected i,j, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn exit_code(err: &NaeError) -> u8 {
    match err {
        NaeError::Config(_) | NaeError::Usage(_) | NaeError::Data(_) | NaeError::Json(_) | NaeError::Csv(_) | NaeError::Io { .. } => 2,
        NaeError::Numerical { .. } | NaeError::Diverged { .. } | NaeError::Construction(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();

    let result = match cli.command {
        Command::Simulate {
            kind,
            n,
            sigma,
            minority_fraction,
            cf,
            rho,
            seed,
            out,
        } => commands::simulate(&commands::SimulateArgs {
            kind: kind.into(),
            n,
            sigma,
            minority_fraction,
            cf,
            rho,
            seed,
            out,
        }),
        Command::Train { config } => commands::train(&config),
        Command::ExportShapes {
            checkpoint,
            data,
            out,
            pairs,
            grid,
        } => commands::export_shapes(&commands::ExportArgs {
            checkpoint,
            data,
            out,
            pairs,
            grid,
        }),
        Command::VerifyTheory {
            grid,
            perturb,
            seed,
            json,
        } => commands::verify(
            &VerifyOptions {
                grid,
                perturb_beta: perturb,
                seed,
                ..VerifyOptions::default()
            },
            json.as_deref(),
        ),
        Command::SweepLambda { config, lambdas, jobs } => commands::sweep(&config, &lambdas, jobs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
