//! Training loop with a persistent sample batch, a fresh initialization
//! batch, Adam updates, optional temperature annealing, and a grid-search
//! tuner for the plain-HMC baseline step size.
//!
//! Per-iteration randomness comes from one stream per batch element with a
//! fixed draw order: (fresh-draw: 2n normals + 1 uniform, only when the
//! burn-in weight is nonzero), then the auxiliary resample (n normals + 1
//! uniform), then one uniform for the Metropolis update of the persistent
//! state. Initialization consumes one fresh-draw per element before the
//! loop. Identical configs and seeds therefore reproduce training bit for
//! bit regardless of worker count.

use crate::energy::{EnergyError, EnergyModel, EnergySpec};
use crate::integrator::{AugmentedState, IntegratorConfig, MaskSchedule};
use crate::nets::NetParams;
use crate::objective::{batch_objective, ObjectiveConfig};
use crate::sampler::{run_chains, RngStream, RunOptions};
use crate::tape::TapeError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("loss term undefined: delta * accept = {0} is not positive")]
    NonPositiveLoss(f64),
    #[error("every step-size candidate diverged")]
    AllCandidatesDiverged,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Sampler(#[from] crate::sampler::SamplerError),
}

/// The reciprocal expected-squared-jump loss for one proposal.
///
/// Positive when delta * accept is below lambda^2, negative above; with
/// `floor` set the product is clamped from below so rejected proposals give
/// a large finite penalty. Without a floor, a non-positive product is an
/// error.
pub fn loss_term(
    delta: f64,
    accept: f64,
    lambda: f64,
    floor: Option<f64>,
) -> Result<f64, TrainError> {
    assert!(lambda > 0.0);
    let mut da = delta * accept;
    match floor {
        Some(f) => da = da.max(f),
        None => {
            if !(da > 0.0) {
                return Err(TrainError::NonPositiveLoss(da));
            }
        }
    }
    let l2 = lambda * lambda;
    Ok(l2 / da - da / l2)
}

// ── Adam ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates plus the bias-correction step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub skipped: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, skipped: 0 }
    }
}

/// One bias-corrected Adam update. A non-finite gradient skips the update
/// (recorded in `opt.skipped`) and returns false.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    opt: &mut OptimizerState,
    learning_rate: f64,
    hp: &AdamParams,
) -> bool {
    assert_eq!(theta.len(), grad.len());
    if grad.iter().any(|g| !g.is_finite()) {
        opt.skipped += 1;
        return false;
    }
    opt.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(opt.step as i32);
    for i in 0..theta.len() {
        opt.m[i] = hp.beta1 * opt.m[i] + (1.0 - hp.beta1) * grad[i];
        opt.v[i] = hp.beta2 * opt.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        let m_hat = opt.m[i] / bc1;
        let v_hat = opt.v[i] / bc2;
        theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    true
}

// ── Config ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealingConfig {
    /// Starting temperature of the geometric schedule ending at 1.
    pub t0: f64,
    /// Force annealing on or off; unset means "only for mixture targets".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        AnnealingConfig { t0: 5.0, enabled: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitDistConfig {
    /// Mean of the Gaussian initialization over positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Standard deviation scale of the initialization.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for InitDistConfig {
    fn default() -> Self {
        InitDistConfig { center: None, scale: 1.0 }
    }
}

fn default_lambda() -> f64 {
    0.1
}

fn default_lr() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

fn default_floor() -> f64 {
    1e-6
}

fn default_clip() -> f64 {
    50.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub energy: EnergySpec,
    pub n_iters: usize,
    pub batch_size: usize,
    pub n_leapfrog: usize,
    pub n_hidden: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub lambda_b: f64,
    /// Initial step size; unset means "tune a zero-network baseline first".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default = "default_true")]
    pub train_step_size: bool,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub annealing: AnnealingConfig,
    #[serde(default)]
    pub init_dist: InitDistConfig,
    #[serde(default = "default_floor")]
    pub loss_floor: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |field: &'static str, message: String| {
            Err(TrainError::InvalidConfig { field, message })
        };
        if self.n_iters < 1 {
            return fail("n_iters", "must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size", "must be >= 1".into());
        }
        if self.n_leapfrog < 1 {
            return fail("n_leapfrog", "must be >= 1".into());
        }
        if self.n_hidden < 1 {
            return fail("n_hidden", "must be >= 1".into());
        }
        if !(self.lambda > 0.0) {
            return fail("lambda", format!("must be positive, got {}", self.lambda));
        }
        if self.lambda_b < 0.0 {
            return fail("lambda_b", format!("must be non-negative, got {}", self.lambda_b));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate", "must be positive".into());
        }
        if let Some(eps) = self.step_size {
            if !(eps > 0.0) {
                return fail("step_size", format!("must be positive, got {eps}"));
            }
        }
        if self.annealing.t0 < 1.0 {
            return fail("annealing.t0", "start temperature must be >= 1".into());
        }
        if !(self.init_dist.scale > 0.0) {
            return fail("init_dist.scale", "must be positive".into());
        }
        if let Some(center) = &self.init_dist.center {
            if center.len() != self.energy.dim {
                return fail("init_dist.center", "length must equal the state dimension".into());
            }
        }
        if !(self.loss_floor > 0.0) {
            return fail("loss_floor", "must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip", "must be positive".into());
        }
        self.energy.build()?;
        Ok(())
    }

    fn annealing_active(&self) -> bool {
        self.annealing
            .enabled
            .unwrap_or(matches!(self.energy.kind, crate::energy::EnergyKind::Mog))
    }
}

/// Geometric interpolation from T0 down to 1 across the run.
pub fn anneal_temperature(iteration: usize, n_iters: usize, t0: f64) -> f64 {
    assert!(iteration < n_iters);
    if n_iters == 1 {
        return 1.0;
    }
    let frac = iteration as f64 / (n_iters - 1) as f64;
    t0.powf(1.0 - frac)
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: Vec<f64>,
    pub mean_accept: Vec<f64>,
    /// Mean of delta * accept: the expected squared jump per iteration.
    pub mean_esjd: Vec<f64>,
    pub temperature: Vec<f64>,
    pub divergence_fraction: Vec<f64>,
    pub skipped_updates: u64,
    pub final_step_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_step_size: Option<f64>,
}

/// One fresh draw from the initialization distribution over augmented
/// states: x ~ pi_0, v ~ N(0, I), d uniform on {-1, +1}.
fn draw_initial(n: usize, init: &InitDistConfig, rng: &mut RngStream) -> AugmentedState {
    let mut x = vec![0.0; n];
    rng.fill_standard_normal(&mut x);
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = *xi * init.scale + init.center.as_ref().map_or(0.0, |c| c[i]);
    }
    let mut v = vec![0.0; n];
    rng.fill_standard_normal(&mut v);
    let d = if rng.uniform() < 0.5 { 1 } else { -1 };
    AugmentedState::new(x, v, d)
}

/// Train a sampler on one target. Returns the final parameters, the mask
/// schedule they were trained with, and the per-iteration report.
pub fn train(
    cfg: &TrainConfig,
) -> Result<(NetParams, MaskSchedule, TrainReport), TrainError> {
    cfg.validate()?;
    let energy = cfg.energy.build()?;
    let n = energy.dim();

    let (eps0, tuned) = match cfg.step_size {
        Some(eps) => (eps, None),
        None => {
            let grid = default_tune_grid();
            let outcome =
                tune_hmc(&energy, cfg.n_leapfrog, &grid, 2000, 4, cfg.seed ^ 0x74756e65)?;
            (outcome.best_step_size, Some(outcome.best_step_size))
        }
    };

    let mut params = NetParams::init(n, cfg.n_hidden, cfg.n_leapfrog, eps0, cfg.seed);
    let masks = MaskSchedule::generate(n, cfg.n_leapfrog, cfg.seed ^ 0x6d61736b);
    let mut opt = OptimizerState::new(params.n_params());
    let base_temperature = energy.temperature();
    let anneal = cfg.annealing_active();

    let mut streams: Vec<RngStream> =
        (0..cfg.batch_size).map(|i| RngStream::new(cfg.seed, i as u64)).collect();
    let mut p_batch: Vec<AugmentedState> = streams
        .iter_mut()
        .map(|rng| draw_initial(n, &cfg.init_dist, rng))
        .collect();

    let ocfg = ObjectiveConfig {
        lambda: cfg.lambda,
        lambda_b: cfg.lambda_b,
        floor: cfg.loss_floor,
        train_step_size: cfg.train_step_size,
    };
    let use_q = cfg.lambda_b != 0.0;

    let mut report = TrainReport {
        loss: Vec::with_capacity(cfg.n_iters),
        mean_accept: Vec::with_capacity(cfg.n_iters),
        mean_esjd: Vec::with_capacity(cfg.n_iters),
        temperature: Vec::with_capacity(cfg.n_iters),
        divergence_fraction: Vec::with_capacity(cfg.n_iters),
        skipped_updates: 0,
        final_step_size: eps0,
        tuned_step_size: tuned,
    };

    for iter in 0..cfg.n_iters {
        let t_i = if anneal {
            base_temperature * anneal_temperature(iter, cfg.n_iters, cfg.annealing.t0)
        } else {
            base_temperature
        };
        let tempered = energy.with_temperature(t_i);

        // fixed per-element draw order: fresh draw, resample, MH uniform
        let mut q_batch = Vec::new();
        if use_q {
            q_batch = streams
                .iter_mut()
                .map(|rng| draw_initial(n, &cfg.init_dist, rng))
                .collect();
        }
        for (state, rng) in p_batch.iter_mut().zip(&mut streams) {
            crate::sampler::resample_aux(state, rng);
        }

        let res = batch_objective(&p_batch, &q_batch, &params, &masks, &tempered, &ocfg);

        let mut grad = res.grad;
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.grad_clip {
            let scale = cfg.grad_clip / norm;
            for g in grad.iter_mut() {
                *g *= scale;
            }
        }
        adam_step(&mut params.theta, &grad, &mut opt, cfg.learning_rate, &cfg.adam);

        let n_elems = res.p_outcomes.len() as f64;
        let mean_accept =
            res.p_outcomes.iter().map(|o| o.accept_prob).sum::<f64>() / n_elems;
        let mean_esjd = res
            .p_outcomes
            .iter()
            .map(|o| o.sq_jump * o.accept_prob)
            .sum::<f64>()
            / n_elems;
        let div_frac =
            res.p_outcomes.iter().filter(|o| o.divergent).count() as f64 / n_elems;

        for (i, (state, rng)) in p_batch.iter_mut().zip(&mut streams).enumerate() {
            let outcome = &res.p_outcomes[i];
            let u = rng.uniform();
            if u < outcome.accept_prob {
                if let Some(prop) = &outcome.proposal {
                    *state = prop.clone();
                }
            }
        }

        report.loss.push(res.value);
        report.mean_accept.push(mean_accept);
        report.mean_esjd.push(mean_esjd);
        report.temperature.push(t_i);
        report.divergence_fraction.push(div_frac);

        if div_frac > 0.9 {
            return Err(TrainError::Diverged(format!(
                "{:.0}% of proposals were non-finite at iteration {iter} \
                 (step size {:.3e})",
                div_frac * 100.0,
                params.step_size()
            )));
        }
    }
    report.skipped_updates = opt.skipped;
    report.final_step_size = params.step_size();
    Ok((params, masks, report))
}

// ── HMC baseline tuning ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct TuneRow {
    pub step_size: f64,
    pub min_ess: f64,
    pub mean_accept: f64,
    pub divergence_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneOutcome {
    pub best_step_size: f64,
    pub rows: Vec<TuneRow>,
}

/// Log-spaced candidates between 1e-2 and 1.
pub fn default_tune_grid() -> Vec<f64> {
    (0..10)
        .map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / 9.0))
        .collect()
}

/// Grid-search the zero-network sampler's step size, maximizing the
/// minimum-over-dimensions ESS; ties break toward larger steps. Candidates
/// whose chains diverge on more than half their transitions are discarded.
pub fn tune_hmc(
    energy: &EnergyModel,
    n_leapfrog: usize,
    grid: &[f64],
    steps_per_candidate: usize,
    n_chains: usize,
    seed: u64,
) -> Result<TuneOutcome, TrainError> {
    assert!(!grid.is_empty(), "step-size grid must be non-empty");
    let n = energy.dim();
    let params = NetParams::init(n, 1, n_leapfrog, grid[0], seed);
    let inits: Vec<Vec<f64>> = vec![vec![0.0; n]; n_chains.max(1)];
    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;

    let mut candidates = grid.to_vec();
    candidates.sort_by(|a, b| a.total_cmp(b));
    for &eps in &candidates {
        let cfg = IntegratorConfig::new(eps, n_leapfrog);
        let opts = RunOptions {
            n_steps: steps_per_candidate,
            seed: seed ^ eps.to_bits(),
            record_full_states: false,
        };
        let traces = run_chains(&inits, &params, &masks_for(&params, seed), energy, &cfg, &opts)?;
        let total: usize = traces.iter().map(|t| t.len()).sum();
        let divergences: usize = traces.iter().map(|t| t.divergences).sum();
        let div_frac = divergences as f64 / total as f64;
        let mean_accept = traces.iter().map(|t| t.acceptance_rate()).sum::<f64>()
            / traces.len() as f64;
        if div_frac > 0.5 {
            rows.push(TuneRow {
                step_size: eps,
                min_ess: 0.0,
                mean_accept,
                divergence_fraction: div_frac,
            });
            continue;
        }
        let per_dim = crate::diagnostics::per_dimension_ess(&traces, energy, n_leapfrog)
            .expect("non-empty traces");
        let min_ess = per_dim.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(TuneRow {
            step_size: eps,
            min_ess,
            mean_accept,
            divergence_fraction: div_frac,
        });
        match best {
            Some((_, best_ess)) if min_ess < best_ess => {}
            _ => best = Some((eps, min_ess)),
        }
    }
    match best {
        Some((eps, _)) => Ok(TuneOutcome { best_step_size: eps, rows }),
        None => Err(TrainError::AllCandidatesDiverged),
    }
}

fn masks_for(params: &NetParams, seed: u64) -> MaskSchedule {
    MaskSchedule::generate(params.dim(), params.n_steps(), seed ^ 0x6d61736b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::EnergyKind;

    #[test]
    fn loss_term_closed_forms() {
        // delta * accept = lambda^2 makes the two terms cancel
        assert_eq!(loss_term(0.25, 1.0, 0.5, None).unwrap(), 0.0);
        // lambda = 1, dA = 2: 1/2 - 2
        assert!((loss_term(2.0, 1.0, 1.0, None).unwrap() - (-1.5)).abs() < 1e-15);
        // the floor caps the blow-up
        let floored = loss_term(0.0, 0.0, 1.0, Some(1e-6)).unwrap();
        assert!((floored - (1e6 - 1e-6)).abs() < 1.0);
        // strict mode rejects a non-positive product
        assert!(matches!(
            loss_term(0.0, 1.0, 1.0, None),
            Err(TrainError::NonPositiveLoss(_))
        ));
    }

    #[test]
    fn loss_term_is_antisymmetric_around_lambda_squared() {
        let lambda = 0.7f64;
        let l4 = lambda.powi(4);
        for c in [0.01, 0.3, 1.0, 5.0] {
            let a = loss_term(c, 1.0, lambda, None).unwrap();
            let b = loss_term(l4 / c, 1.0, lambda, None).unwrap();
            assert!((a + b).abs() < 1e-12, "c={c}: {a} vs {b}");
        }
    }

    #[test]
    fn adam_closed_forms() {
        let hp = AdamParams::default();
        // zero gradient leaves parameters alone
        let mut theta = vec![1.0, -2.0];
        let mut opt = OptimizerState::new(2);
        assert!(adam_step(&mut theta, &[0.0, 0.0], &mut opt, 1e-3, &hp));
        assert_eq!(theta, vec![1.0, -2.0]);

        // first step from zero moments: delta = -lr / (1 + eps)
        let mut theta = vec![0.0];
        let mut opt = OptimizerState::new(1);
        adam_step(&mut theta, &[1.0], &mut opt, 1e-3, &hp);
        let expect = -1e-3 / (1.0 + hp.epsilon);
        assert!((theta[0] - expect).abs() < 1e-18);

        // constant gradient: steps approach lr * sign(g)
        let mut theta = vec![0.0];
        let mut opt = OptimizerState::new(1);
        let mut prev = 0.0;
        for _ in 0..500 {
            prev = theta[0];
            adam_step(&mut theta, &[2.5], &mut opt, 1e-3, &hp);
        }
        assert!(((prev - theta[0]) - 1e-3).abs() < 1e-6);

        // non-finite gradient is skipped and counted
        let before = theta.clone();
        assert!(!adam_step(&mut theta, &[f64::NAN], &mut opt, 1e-3, &hp));
        assert_eq!(theta, before);
        assert_eq!(opt.skipped, 1);
    }

    #[test]
    fn annealing_schedule_endpoints_and_midpoint() {
        assert_eq!(anneal_temperature(0, 101, 5.0), 5.0);
        assert!((anneal_temperature(100, 101, 5.0) - 1.0).abs() < 1e-12);
        assert!((anneal_temperature(50, 101, 5.0) - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(anneal_temperature(0, 1, 5.0), 1.0);
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            energy: EnergySpec::new(EnergyKind::StdGaussian, 2),
            n_iters: 10,
            batch_size: 8,
            n_leapfrog: 2,
            n_hidden: 4,
            learning_rate: 1e-3,
            lambda: 0.1,
            lambda_b: 0.0,
            step_size: Some(0.2),
            train_step_size: true,
            adam: AdamParams::default(),
            seed: 3,
            annealing: AnnealingConfig::default(),
            init_dist: InitDistConfig::default(),
            loss_floor: 1e-6,
            grad_clip: 50.0,
        }
    }

    #[test]
    fn config_validation_names_the_failing_field() {
        let mut cfg = tiny_config();
        cfg.lambda = 0.0;
        match cfg.validate() {
            Err(TrainError::InvalidConfig { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = tiny_config();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "energy": {"kind": "scg", "dim": 2},
            "n_iters": 100,
            "batch_size": 16,
            "n_leapfrog": 5,
            "n_hidden": 10,
            "lambda": 0.1,
            "seed": 9
        }"#;
        let cfg: TrainConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.learning_rate, 1e-3);
        assert!(cfg.train_step_size);
        assert!(cfg.step_size.is_none());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let (p1, m1, r1) = train(&cfg).unwrap();
        let (p2, m2, r2) = train(&cfg).unwrap();
        assert_eq!(p1.theta, p2.theta);
        assert_eq!(m1, m2);
        assert_eq!(r1.loss, r2.loss);
    }

    #[test]
    fn short_training_reduces_the_objective() {
        let mut cfg = tiny_config();
        cfg.n_iters = 200;
        cfg.batch_size = 32;
        cfg.n_leapfrog = 3;
        cfg.n_hidden = 6;
        cfg.step_size = Some(0.15);
        let (_, _, report) = train(&cfg).unwrap();
        let first: f64 = report.loss[..50].iter().sum::<f64>() / 50.0;
        let last: f64 = report.loss[150..].iter().sum::<f64>() / 50.0;
        assert!(
            last < first,
            "objective should drop from its plain-HMC start: {first} -> {last}"
        );
    }

    #[test]
    fn tune_hmc_contracts() {
        let energy = EnergyModel::std_gaussian(2);
        // a one-element grid is returned as-is
        let single = tune_hmc(&energy, 5, &[0.3], 200, 2, 1).unwrap();
        assert_eq!(single.best_step_size, 0.3);

        let grid = default_tune_grid();
        let a = tune_hmc(&energy, 10, &grid, 800, 2, 7).unwrap();
        let b = tune_hmc(&energy, 10, &grid, 800, 2, 7).unwrap();
        assert_eq!(a.best_step_size, b.best_step_size);
        let row = a
            .rows
            .iter()
            .find(|r| r.step_size == a.best_step_size)
            .unwrap();
        assert!(
            row.mean_accept >= 0.4 && row.mean_accept <= 0.95,
            "winning step size has extreme acceptance {}",
            row.mean_accept
        );
    }
}
