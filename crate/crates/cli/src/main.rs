//! Command-line front end: train a sampler, sample with it (or with its
//! plain-HMC reduction), benchmark trained against tuned baseline, and run
//! the structural self checks.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure, 4 I/O error. `L2MC_THREADS` caps the worker pool.

use anyhow::Context;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

mod benchmark;
mod manifest;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "l2hmc", version, about = "Trainable Hamiltonian Monte Carlo samplers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a sampler from a JSON config, writing checkpoint and report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run chains from a checkpoint against an energy spec, writing one
    /// trace CSV per chain plus diagnostics.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Path to an energy spec JSON file.
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        chains: usize,
        /// Zero the network heads: plain HMC at the checkpoint step size.
        #[arg(long)]
        hmc: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune an HMC baseline, train a sampler, and compare effective sample
    /// sizes at matched budgets.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the structural property checks; nonzero exit iff any fails.
    Check {
        /// Restrict to small dimensions and trajectory lengths.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Error-to-exit-code mapping per the documented contract.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(te) = cause.downcast_ref::<l2hmc::TrainError>() {
            return match te {
                l2hmc::TrainError::InvalidConfig { .. } => 2,
                l2hmc::TrainError::Energy(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<l2hmc::energy::EnergyError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<l2hmc::checkpoint::CheckpointError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<l2hmc::sampler::SamplerError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("L2MC_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: L2MC_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Cmd::Sample { checkpoint, energy, steps, chains, hmc, seed, out } => {
            cmd_sample(&checkpoint, &energy, steps, chains, hmc, seed, &out)
        }
        Cmd::Benchmark { config, out } => benchmark::cmd_benchmark(&config, &out),
        Cmd::Check { quick, seed } => cmd_check(quick, seed),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(
    path: &Path,
    what: &str,
) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {what} from {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn cmd_train(config_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<ExitCode> {
    let started = Instant::now();
    let mut cfg: l2hmc::TrainConfig = read_json(config_path, "train config")?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)?;

    let (params, masks, report) = l2hmc::train(&cfg)?;
    let ckpt = l2hmc::Checkpoint::from_params(&params, &masks, cfg.seed);

    let ckpt_path = out.join("checkpoint.json");
    let report_path = out.join("train_report.json");
    std::fs::write(&ckpt_path, ckpt.to_json()?)?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let manifest = Manifest::new("train", serde_json::to_value(&cfg)?, cfg.seed, started)
        .artifact("checkpoint", &ckpt_path)
        .artifact("train_report", &report_path);
    manifest.write(out)?;
    println!(
        "trained {} iterations; final step size {:.4}; artifacts in {}",
        cfg.n_iters,
        report.final_step_size,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    checkpoint: &Path,
    energy_path: &Path,
    steps: usize,
    chains: usize,
    hmc: bool,
    seed: u64,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let started = Instant::now();
    let ckpt_text = std::fs::read_to_string(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let ckpt = l2hmc::Checkpoint::from_json(&ckpt_text)?;
    let (params, masks) = ckpt.into_params()?;
    let params = if hmc { params.zeroed_heads() } else { params };

    let spec: l2hmc::EnergySpec = read_json(energy_path, "energy spec")?;
    let energy = spec.build()?;
    if energy.dim() != params.dim() {
        anyhow::bail!(l2hmc::TrainError::InvalidConfig {
            field: "energy.dim",
            message: format!(
                "checkpoint has n={}, energy has n={}",
                params.dim(),
                energy.dim()
            ),
        });
    }
    if chains == 0 || steps == 0 {
        anyhow::bail!(l2hmc::TrainError::InvalidConfig {
            field: "steps/chains",
            message: "must be >= 1".into(),
        });
    }
    std::fs::create_dir_all(out)?;

    let cfg = l2hmc::IntegratorConfig::from_params(&params);
    let inits = vec![vec![0.0; energy.dim()]; chains];
    let opts = l2hmc::RunOptions { n_steps: steps, seed, record_full_states: false };
    let traces = l2hmc::run_chains(&inits, &params, &masks, &energy, &cfg, &opts)?;

    let mut manifest = Manifest::new(
        "sample",
        serde_json::json!({
            "checkpoint": checkpoint.display().to_string(),
            "energy": spec,
            "steps": steps,
            "chains": chains,
            "hmc": hmc,
        }),
        seed,
        started,
    );
    for (k, trace) in traces.iter().enumerate() {
        let path = out.join(format!("trace_{k}.csv"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        l2hmc::sampler::write_trace_csv(trace, &mut file)?;
        manifest = manifest.artifact(format!("trace_{k}"), &path);
    }
    let diag = l2hmc::diagnostics::diagnose(&traces, &energy, params.n_steps())?;
    let diag_path = out.join("diagnostics.json");
    std::fs::write(&diag_path, serde_json::to_string_pretty(&diag)?)?;
    manifest = manifest.artifact("diagnostics", &diag_path);
    manifest.write(out)?;
    println!(
        "sampled {chains} chains x {steps} steps; mean ESS/step {:.3e}; artifacts in {}",
        diag.mean_ess,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(quick: bool, seed: u64) -> anyhow::Result<ExitCode> {
    let report = l2hmc::diagnostics::check_suite(seed, quick);
    for e in &report.entries {
        println!(
            "{} {:<24} max error {:>12.3e}  tolerance {:>8.1e}",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.max_error,
            e.tolerance
        );
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
