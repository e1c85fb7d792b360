use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdp::bench::{parse_bins, parse_heads, parse_truths, Command, FileConfig, Overrides, RunConfig};
use sdp::Result;

#[derive(Debug, Parser)]
#[command(name = "sdp-bench", version, about = "Benchmarks for discrete conditional density heads")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV tables and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Comma-separated heads (mn,gmm,lmm,udp,smn,sdp) or "all".
    #[arg(long, global = true)]
    heads: Option<String>,

    /// Smoothing window radius.
    #[arg(long, global = true)]
    radius: Option<usize>,

    /// Penalty weight; replaces the searched grid.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Trend filtering order; replaces the searched grid.
    #[arg(long, global = true)]
    order: Option<usize>,

    /// Sample count (marginal) or the single sample size (synth).
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Bins per target dimension, e.g. "32" or "38x38".
    #[arg(long, global = true)]
    bins: Option<String>,

    #[arg(long, global = true)]
    folds: Option<usize>,

    /// Worker threads for grid cells and runs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Training step limit.
    #[arg(long, global = true)]
    steps: Option<usize>,

    /// Truth families for synth: gmm, edge or "all".
    #[arg(long, global = true)]
    truths: Option<String>,

    /// CSV dataset for tabular runs.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Comma-separated feature columns.
    #[arg(long, global = true)]
    features: Option<String>,

    /// Comma-separated target columns.
    #[arg(long, global = true)]
    targets: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// 1000-bin marginal experiment: UDP versus SDP across window radii.
    Marginal,
    /// Latent-class synthetic benchmark over all heads and sample sizes.
    Synth,
    /// K-fold benchmark on a CSV dataset.
    Tabular,
}

fn columns(s: &str) -> Vec<String> {
    s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    let command = match cli.command {
        Sub::Marginal => Command::Marginal,
        Sub::Synth => Command::Synth,
        Sub::Tabular => Command::Tabular,
    };
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    let flags = Overrides {
        out: cli.out,
        seed: cli.seed,
        trials: cli.trials,
        heads: cli.heads.as_deref().map(parse_heads).transpose()?,
        radius: cli.radius,
        lambda: cli.lambda,
        order: cli.order,
        samples: cli.samples,
        bins: cli.bins.as_deref().map(parse_bins).transpose()?,
        folds: cli.folds,
        workers: cli.workers,
        steps: cli.steps,
        truths: cli.truths.as_deref().map(parse_truths).transpose()?,
        data: cli.data,
        features: cli.features.as_deref().map(columns),
        targets: cli.targets.as_deref().map(columns),
    };
    RunConfig::resolve(command, file, flags)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli).and_then(|run| {
        run.run()?;
        println!("wrote {}", run.out().display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdp-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
