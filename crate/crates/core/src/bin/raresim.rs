use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use raresim::{run, ExperimentConfig, ExperimentKind};

/// Rare-event experiments for degenerate chain diffusions.
#[derive(Debug, Parser)]
#[command(name = "raresim", version)]
struct Cli {
    /// One of mc, is, sweep, hjb, action, compare.
    #[arg(value_parser = parse_kind)]
    kind: ExperimentKind,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `raresim-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: machine parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Write a few sampled trajectories under `paths/`.
    #[arg(long)]
    dump_paths: bool,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: raresim::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = ExperimentConfig::from_file(&cli.config).and_then(|mut config| {
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        config.debug.dump_paths |= cli.dump_paths;
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("raresim-out"));
        let manifest = run(cli.kind, &config, &out, cli.workers)?;
        Ok((out, manifest))
    });
    match result {
        Ok((out, manifest)) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} outputs written to {}", manifest.files.len() + 1, out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg = format!("{msg}\n  caused by: {s}");
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
