//! `embedloc`: synthetic corpus generation, contrastive training, embedding
//! and locality reports from the command line.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use embedloc::augment::ChainName;
use embedloc::locality::SweepKind;

use crate::commands::Run;
use crate::config::{RunConfig, SEED_ENV};
use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "embedloc", version, about = "Embedding-space locality experiments on mel spectrograms")]
struct Cli {
    /// JSON run configuration; defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config leaf, e.g. `--set train.total_steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Augmentation chain (none, TS, PS, EQ, TSPS, TSPSEQ, RRC, ...).
    #[arg(long, global = true)]
    chain: Option<String>,

    /// Run on a single thread for bit-reproducible artifacts.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for data preparation and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus (audio and manifest).
    Synth,
    /// Compute mel spectrograms for every manifest track.
    Extract,
    /// Train the contrastive encoder for the configured chain.
    Train,
    /// Embed every track with the trained encoder.
    Embed,
    /// Distance between original and stretched or shifted tracks.
    Sweep {
        #[arg(long, value_enum, default_value_t = Kind::TimeStretch)]
        kind: Kind,
    },
    /// Tempo, key and tag locality for each neighborhood size.
    Neighborhood,
    /// Tag precision and tag retrieval for each neighborhood size.
    Retrieval,
    /// Train and evaluate the tempo probe on the embeddings.
    Probe,
    /// Merge all reports into summary.csv and summary.json.
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    TimeStretch,
    PitchShift,
}

fn setup(cli: &Cli) -> Result<Run, Failure> {
    let mut overrides = cli.overrides.clone();
    if let Some(chain) = &cli.chain {
        let name: ChainName = chain.parse().map_err(|e: embedloc::Error| Failure::config(e.to_string()))?;
        let codes: Vec<String> = name.0.iter().map(|s| format!("\"{}\"", s.code())).collect();
        overrides.insert(0, format!("augmentation.chain=[{}]", codes.join(",")));
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides, std::env::var(SEED_ENV).ok())?;
    let threads = if cli.deterministic { Some(1) } else { cli.workers };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start {n} workers: {e}")))?;
    }
    Ok(Run::new(config))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let run = setup(cli)?;
    match &cli.command {
        Command::Synth => run.synth(),
        Command::Extract => run.extract(),
        Command::Train => run.train(),
        Command::Embed => run.embed(),
        Command::Sweep { kind } => run.sweep(match kind {
            Kind::TimeStretch => SweepKind::TimeStretch,
            Kind::PitchShift => SweepKind::PitchShift,
        }),
        Command::Neighborhood => run.neighborhood(),
        Command::Retrieval => run.retrieval(),
        Command::Probe => run.probe(),
        Command::Report => run.report(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
