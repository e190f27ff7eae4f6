//! `dmft`: run one experiment from a TOML config and write CSV/JSON
//! artifacts plus a `manifest.json` into the output directory.

mod commands;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    Simulate,
    Meanfield,
    ChaosSurface,
    TwopopMap,
    FpRate,
    FpEvolve,
    Spiking,
    GirsanovVerify,
    Compare,
}

#[derive(Debug, Parser)]
#[command(name = "dmft", version, about = "Random recurrent network experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, env = "DMFT_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the seed given in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Serialize)]
struct Manifest {
    command: Command,
    config: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    version: &'static str,
    threads: usize,
    wall_time_s: f64,
    outputs: Vec<String>,
    summary: serde_json::Value,
    error: Option<String>,
}

fn run(args: &Args, text: &str) -> Result<commands::Outcome> {
    let dir = args.out.as_path();
    match args.command {
        Command::Simulate => commands::simulate_cmd(text, args.seed, dir),
        Command::Meanfield => commands::meanfield_cmd(text, args.seed, dir),
        Command::ChaosSurface => commands::chaos_surface_cmd(text, args.seed, dir),
        Command::TwopopMap => commands::twopop_map_cmd(text, args.seed, dir),
        Command::FpRate => commands::fp_rate_cmd(text, args.seed, dir),
        Command::FpEvolve => commands::fp_evolve_cmd(text, args.seed, dir),
        Command::Spiking => commands::spiking_cmd(text, args.seed, dir),
        Command::GirsanovVerify => commands::girsanov_cmd(text, args.seed, dir),
        Command::Compare => commands::compare_cmd(text, args.seed, dir),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(dir.join("manifest.json"), text).context("writing manifest.json")
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return ExitCode::FAILURE;
    }
    let start = Instant::now();
    let text = std::fs::read(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .and_then(|b| String::from_utf8(b).context("config is not UTF-8"));
    let hash = text.as_ref().ok().map(|t| hex(&Sha256::digest(t.as_bytes())));
    let result = text.and_then(|t| run(&args, &t));
    let mut manifest = Manifest {
        command: args.command,
        config: args.config.display().to_string(),
        config_sha256: hash,
        seed: args.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_s: 0.0,
        outputs: vec![],
        summary: serde_json::Value::Null,
        error: None,
    };
    match result {
        Ok(outcome) => {
            manifest.seed = Some(outcome.seed);
            manifest.outputs = outcome.outputs;
            manifest.summary = outcome.summary;
            manifest.error = outcome.failure;
        }
        Err(e) => manifest.error = Some(format!("{e:#}")),
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = write_manifest(&args.out, &manifest) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match &manifest.error {
        Some(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    }
}
