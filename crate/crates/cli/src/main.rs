// `!(x > y)` rejects NaN together with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod pipelines;

use clap::{Parser, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::RunConfig;
use pipelines::{Artifacts, Failure};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pipeline {
    Integrate,
    FindOrbit,
    Scan,
    DisplaceCheck,
}

/// Periodic orbits of magnetic systems on the torus and the round sphere.
#[derive(Debug, Parser)]
#[command(name = "magflow", version)]
struct Args {
    pipeline: Pipeline,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "magflow-out")]
    out: PathBuf,
    /// Overrides the `seed` key of the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn thread_pool() -> Result<(), Failure> {
    let Ok(v) = std::env::var("MAGFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Config(format!("MAGFLOW_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn run(args: &Args) -> Result<Artifacts, Failure> {
    thread_pool()?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let sys = cfg.system()?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let base = args.config.parent().unwrap_or(Path::new("."));
    match args.pipeline {
        Pipeline::Integrate => pipelines::integrate(&cfg, &sys, &text),
        Pipeline::FindOrbit => pipelines::find_orbit(&cfg, &sys, &text, seed, base),
        Pipeline::Scan => pipelines::scan(&cfg, &sys, &text, seed),
        Pipeline::DisplaceCheck => pipelines::displace_check(&cfg, &sys),
    }
}

fn write(dir: &Path, art: &Artifacts) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &art.files {
        std::fs::write(dir.join(name), body)?;
    }
    std::fs::write(dir.join("summary.txt"), &art.summary)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let art = match run(&args) {
        Ok(a) => a,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {}: {msg}", args.config.display());
            return ExitCode::from(1);
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write(&args.out, &art) {
        eprintln!("cannot write {}: {e}", args.out.display());
        return ExitCode::from(2);
    }
    print!("{}", art.summary);
    if let Some(msg) = &art.unverified {
        eprintln!("verification failed: {msg}");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
