//! The benchmark workflow: tune a plain-HMC baseline on a named task, train
//! a sampler with the same trajectory length, run both at matched budgets,
//! and write an effective-sample-size comparison table.

use crate::manifest::Manifest;
use crate::read_json;
use anyhow::Context;
use l2hmc::diagnostics::diagnose;
use l2hmc::energy::EnergyKind;
use l2hmc::{
    run_chains, tune_hmc, Checkpoint, ChainTrace, EnergySpec, IntegratorConfig, NetParams,
    RngStream, RunOptions, TrainConfig,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// One of the benchmark tasks: icg, scg, mog, rough_well.
    pub task: EnergyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Full training configuration; energy and step size are filled in
    /// from the task and the tuning stage when omitted.
    pub train: TrainConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub steps: usize,
    pub chains: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { grid: None, steps: 2000, chains: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub steps: usize,
    pub chains: usize,
    pub burn_in: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { steps: 20_000, chains: 8, burn_in: 1000 }
    }
}

#[derive(Serialize)]
struct ComparisonRow {
    distribution: String,
    ess_l2hmc: f64,
    ess_hmc: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct BenchmarkReport {
    row: ComparisonRow,
    tuned_step_size: f64,
    trained_step_size: f64,
    l2hmc: l2hmc::diagnostics::DiagnosticsReport,
    hmc: l2hmc::diagnostics::DiagnosticsReport,
    tune_rows: Vec<l2hmc::training::TuneRow>,
}

fn trim(trace: &ChainTrace, burn_in: usize) -> ChainTrace {
    let skip = burn_in.min(trace.len().saturating_sub(1));
    ChainTrace {
        positions: trace.positions[skip..].to_vec(),
        accepts: trace.accepts[skip..].to_vec(),
        accept_probs: trace.accept_probs[skip..].to_vec(),
        sq_jumps: trace.sq_jumps[skip..].to_vec(),
        divergences: trace.divergences,
        full_states: None,
    }
}

fn eval_sampler(
    params: &NetParams,
    masks: &l2hmc::MaskSchedule,
    energy: &l2hmc::EnergyModel,
    cfg: &IntegratorConfig,
    eval: &EvalConfig,
    seed: u64,
) -> anyhow::Result<(Vec<ChainTrace>, l2hmc::diagnostics::DiagnosticsReport)> {
    let mut init_rng = RngStream::new(seed, u64::MAX);
    let inits: Vec<Vec<f64>> = (0..eval.chains)
        .map(|_| {
            let mut x = vec![0.0; energy.dim()];
            init_rng.fill_standard_normal(&mut x);
            x
        })
        .collect();
    let opts = RunOptions { n_steps: eval.steps, seed, record_full_states: false };
    let traces = run_chains(&inits, params, masks, energy, cfg, &opts)?;
    let trimmed: Vec<ChainTrace> = traces.iter().map(|t| trim(t, eval.burn_in)).collect();
    let report = diagnose(&trimmed, energy, cfg.n_steps)?;
    Ok((trimmed, report))
}

pub fn cmd_benchmark(config_path: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let started = Instant::now();
    let mut cfg: BenchmarkConfig = read_json(config_path, "benchmark config")?;

    // resolve the energy from the task, defaulting dimensions per task
    let dim = cfg.dim.unwrap_or(match cfg.task {
        EnergyKind::Icg => 20,
        _ => 2,
    });
    let spec = EnergySpec::new(cfg.task, dim);
    cfg.train.energy = spec.clone();
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;
    let energy = spec.build()?;
    std::fs::create_dir_all(out)?;

    // 1. tune the zero-network baseline
    let grid = cfg.tune.grid.clone().unwrap_or_else(l2hmc::training::default_tune_grid);
    let tuned = tune_hmc(
        &energy,
        cfg.train.n_leapfrog,
        &grid,
        cfg.tune.steps,
        cfg.tune.chains,
        cfg.seed ^ 0x74756e65,
    )?;
    println!("tuned baseline step size: {:.4}", tuned.best_step_size);

    // 2. train at the tuned step size
    if cfg.train.step_size.is_none() {
        cfg.train.step_size = Some(tuned.best_step_size);
    }
    let (params, masks, train_report) = l2hmc::train(&cfg.train)?;
    println!("trained; final step size {:.4}", train_report.final_step_size);

    let ckpt = Checkpoint::from_params(&params, &masks, cfg.seed);
    let ckpt_path = out.join("checkpoint.json");
    std::fs::write(&ckpt_path, ckpt.to_json()?)?;
    let train_report_path = out.join("train_report.json");
    std::fs::write(&train_report_path, serde_json::to_string_pretty(&train_report)?)?;

    // 3. matched-budget evaluation: same chains, steps and leapfrogs per step
    let trained_cfg = IntegratorConfig::from_params(&params);
    let (_, l2hmc_diag) =
        eval_sampler(&params, &masks, &energy, &trained_cfg, &cfg.eval, cfg.seed)?;

    let baseline = params.zeroed_heads();
    let baseline_cfg = IntegratorConfig::new(tuned.best_step_size, cfg.train.n_leapfrog);
    let (_, hmc_diag) =
        eval_sampler(&baseline, &masks, &energy, &baseline_cfg, &cfg.eval, cfg.seed)?;

    let row = ComparisonRow {
        distribution: format!("{dim}-d {:?}", cfg.task).to_lowercase(),
        ess_l2hmc: l2hmc_diag.mean_ess,
        ess_hmc: hmc_diag.mean_ess,
        ratio: l2hmc_diag.mean_ess / hmc_diag.mean_ess,
    };
    println!(
        "{}: ESS/step {:.3e} (trained) vs {:.3e} (tuned baseline), ratio {:.1}",
        row.distribution, row.ess_l2hmc, row.ess_hmc, row.ratio
    );

    let csv_path = out.join("ess_comparison.csv");
    std::fs::write(
        &csv_path,
        format!(
            "distribution,ess_l2hmc,ess_hmc,ratio\n{},{:.6e},{:.6e},{:.3}\n",
            row.distribution, row.ess_l2hmc, row.ess_hmc, row.ratio
        ),
    )?;
    let report = BenchmarkReport {
        row,
        tuned_step_size: tuned.best_step_size,
        trained_step_size: train_report.final_step_size,
        l2hmc: l2hmc_diag,
        hmc: hmc_diag,
        tune_rows: tuned.rows,
    };
    let json_path = out.join("ess_comparison.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;

    Manifest::new("benchmark", serde_json::to_value(&cfg)?, cfg.seed, started)
        .artifact("checkpoint", &ckpt_path)
        .artifact("train_report", &train_report_path)
        .artifact("ess_comparison_csv", &csv_path)
        .artifact("ess_comparison_json", &json_path)
        .write(out)
        .context("writing benchmark manifest")?;
    Ok(ExitCode::SUCCESS)
}
