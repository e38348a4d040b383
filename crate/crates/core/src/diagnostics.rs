//! Mixing diagnostics and the self-check harness.
//!
//! Autocorrelation uses the target's known mean and covariance trace:
//!
//!   rho_t = 1 / (Trace(Sigma) (T - t)) * sum_{tau <= T-t-1} (x_tau - mu) . (x_{tau+t} - mu)
//!
//! and the effective sample size per Metropolis-Hastings step is
//! 1 / (1 + 2 sum_t rho_t), with the sum truncated at the first lag whose
//! autocorrelation drops below 0.05. The per-gradient variant divides by the
//! 2M energy-gradient evaluations every MH step costs.

use crate::energy::{EnergyError, EnergyModel};
use crate::integrator::{
    apply_operator, AugmentedState, IntegratorConfig, MaskSchedule, Workspace,
};
use crate::nets::{Field, NetParams, FIELDS, STACKS};
use crate::objective::{batch_objective, ObjectiveConfig};
use crate::sampler::ChainTrace;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("dimension mismatch between trace and moments")]
    DimMismatch,
}

/// Threshold below which the autocorrelation sum is truncated.
pub const TRUNCATION_THRESHOLD: f64 = 0.05;

/// Autocorrelation values rho_0..rho_K and the truncation index: the first
/// lag t >= 1 with rho_t below the threshold (series length if none).
#[derive(Debug, Clone)]
pub struct AutocorrSeries {
    pub rho: Vec<f64>,
    pub truncation: usize,
}

/// Autocorrelation of a position trace against known moments.
pub fn autocorrelation(
    positions: &[Vec<f64>],
    mu: &[f64],
    trace_sigma: f64,
) -> Result<AutocorrSeries, DiagnosticsError> {
    if positions.is_empty() {
        return Err(DiagnosticsError::EmptyTrace);
    }
    if positions[0].len() != mu.len() {
        return Err(DiagnosticsError::DimMismatch);
    }
    let t_len = positions.len();
    let dim = mu.len();
    // center once; rho_t is then a windowed dot product of the centered rows
    let centered: Vec<Vec<f64>> = positions
        .iter()
        .map(|p| (0..dim).map(|i| p[i] - mu[i]).collect())
        .collect();
    let mut rho = Vec::new();
    let mut truncation = None;
    for t in 0..t_len {
        let window = t_len - t;
        let mut acc = 0.0;
        for tau in 0..window {
            let a = &centered[tau];
            let b = &centered[tau + t];
            acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        let val = acc / (trace_sigma * window as f64);
        rho.push(val);
        if t >= 1 && val < TRUNCATION_THRESHOLD {
            truncation = Some(t);
            break;
        }
    }
    let truncation = truncation.unwrap_or(rho.len());
    Ok(AutocorrSeries { rho, truncation })
}

/// Scalar-series convenience wrapper for per-dimension diagnostics.
pub fn autocorrelation_1d(
    series: &[f64],
    mu: f64,
    variance: f64,
) -> Result<AutocorrSeries, DiagnosticsError> {
    let rows: Vec<Vec<f64>> = series.iter().map(|&v| vec![v]).collect();
    autocorrelation(&rows, &[mu], variance)
}

/// Effective sample size, per MH step and per gradient evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EssReport {
    pub ess_per_step: f64,
    pub ess_per_grad: f64,
    pub n_grad_evals: usize,
}

/// ESS from a truncated autocorrelation series. `n_leapfrog` fixes the
/// gradient budget (two evaluations per leapfrog step per MH step) and
/// `n_steps` is the trace length behind the series.
pub fn ess(series: &AutocorrSeries, n_leapfrog: usize, n_steps: usize) -> EssReport {
    let sum: f64 = series.rho[1..series.truncation.min(series.rho.len())]
        .iter()
        .sum();
    let ess_per_step = 1.0 / (1.0 + 2.0 * sum);
    let grads_per_step = 2 * n_leapfrog;
    EssReport {
        ess_per_step,
        ess_per_grad: ess_per_step / grads_per_step as f64,
        n_grad_evals: grads_per_step * n_steps,
    }
}

/// Fraction of positions nearest each centroid; sums to one.
pub fn mode_occupancy(positions: &[Vec<f64>], centroids: &[&[f64]]) -> Vec<f64> {
    assert!(!centroids.is_empty());
    let mut counts = vec![0usize; centroids.len()];
    for p in positions {
        let nearest = centroids
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let d: f64 = p.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (k, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap();
        counts[nearest] += 1;
    }
    let total = positions.len().max(1) as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Sample mean and its Monte-Carlo standard error via batch means.
pub fn batch_means_mcse(series: &[f64], n_batches: usize) -> (f64, f64) {
    let t = series.len();
    let b = n_batches.max(2).min(t);
    let batch_len = t / b;
    let used = batch_len * b;
    let mean: f64 = series[..used].iter().sum::<f64>() / used as f64;
    let mut var_of_means = 0.0;
    for k in 0..b {
        let bm: f64 =
            series[k * batch_len..(k + 1) * batch_len].iter().sum::<f64>() / batch_len as f64;
        var_of_means += (bm - mean) * (bm - mean);
    }
    var_of_means /= (b - 1) as f64;
    (mean, (var_of_means / b as f64).sqrt())
}

// ── Sampling-run report ─────────────────────────────────────────────────

/// Summary statistics for a set of chains against one target.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub per_chain_ess: Vec<f64>,
    pub mean_ess: f64,
    pub min_ess: f64,
    pub max_ess: f64,
    pub mean_ess_per_grad: f64,
    pub autocorr: Vec<f64>,
    pub truncation_index: usize,
    pub mode_occupancy: Vec<f64>,
    pub mean_acceptance: f64,
    /// Where mu and Sigma came from; analytic for every built-in target.
    pub moments: String,
}

/// Diagnose traces with the target's analytic moments.
pub fn diagnose(
    traces: &[ChainTrace],
    energy: &EnergyModel,
    n_leapfrog: usize,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    if traces.is_empty() || traces.iter().any(|t| t.is_empty()) {
        return Err(DiagnosticsError::EmptyTrace);
    }
    let mu = energy.true_mean();
    let trace_sigma = energy.trace_cov();
    let mut per_chain_ess = Vec::with_capacity(traces.len());
    let mut series_list = Vec::with_capacity(traces.len());
    for t in traces {
        let series = autocorrelation(&t.positions, &mu, trace_sigma)?;
        per_chain_ess.push(ess(&series, n_leapfrog, t.len()).ess_per_step);
        series_list.push(series);
    }
    let mean_ess = per_chain_ess.iter().sum::<f64>() / per_chain_ess.len() as f64;
    let min_ess = per_chain_ess.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ess = per_chain_ess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // chain-mean autocorrelation up to the shortest truncation
    let min_len = series_list.iter().map(|s| s.rho.len()).min().unwrap();
    let autocorr: Vec<f64> = (0..min_len)
        .map(|t| series_list.iter().map(|s| s.rho[t]).sum::<f64>() / series_list.len() as f64)
        .collect();
    let truncation_index = series_list.iter().map(|s| s.truncation).min().unwrap();

    let mode_occupancy = match energy.centroids() {
        Some(cs) => {
            let all: Vec<Vec<f64>> =
                traces.iter().flat_map(|t| t.positions.iter().cloned()).collect();
            mode_occupancy(&all, &cs)
        }
        None => Vec::new(),
    };
    let mean_acceptance =
        traces.iter().map(|t| t.acceptance_rate()).sum::<f64>() / traces.len() as f64;

    Ok(DiagnosticsReport {
        per_chain_ess,
        mean_ess,
        min_ess,
        max_ess,
        mean_ess_per_grad: mean_ess / (2 * n_leapfrog) as f64,
        autocorr,
        truncation_index,
        mode_occupancy,
        mean_acceptance,
        moments: "analytic".to_string(),
    })
}

/// Per-dimension ESS (mean over chains), the step-size tuning metric.
pub fn per_dimension_ess(
    traces: &[ChainTrace],
    energy: &EnergyModel,
    n_leapfrog: usize,
) -> Result<Vec<f64>, DiagnosticsError> {
    if traces.is_empty() || traces.iter().any(|t| t.is_empty()) {
        return Err(DiagnosticsError::EmptyTrace);
    }
    let mu = energy.true_mean();
    let var = energy.true_cov_diag();
    let dim = energy.dim();
    let mut out = vec![0.0; dim];
    for t in traces {
        for i in 0..dim {
            let series: Vec<f64> = t.positions.iter().map(|p| p[i]).collect();
            let ac = autocorrelation_1d(&series, mu[i], var[i])?;
            out[i] += ess(&ac, n_leapfrog, t.len()).ess_per_step;
        }
    }
    for v in out.iter_mut() {
        *v /= traces.len() as f64;
    }
    Ok(out)
}

// ── Reference integrator (independent oracle) ───────────────────────────

/// Textbook leapfrog step: half momentum kick, full position drift, half
/// momentum kick. Coded independently of the augmented integrator so the
/// zero-network reduction can be checked against it.
pub fn reference_leapfrog_step(
    x: &mut [f64],
    v: &mut [f64],
    step_size: f64,
    energy: &EnergyModel,
) -> Result<(), EnergyError> {
    let g = energy.grad(x)?;
    for i in 0..x.len() {
        v[i] -= 0.5 * step_size * g[i];
    }
    for i in 0..x.len() {
        x[i] += step_size * v[i];
    }
    let g = energy.grad(x)?;
    for i in 0..x.len() {
        v[i] -= 0.5 * step_size * g[i];
    }
    Ok(())
}

/// M reference steps.
pub fn reference_leapfrog(
    x: &mut [f64],
    v: &mut [f64],
    step_size: f64,
    n_steps: usize,
    energy: &EnergyModel,
) -> Result<(), EnergyError> {
    for _ in 0..n_steps {
        reference_leapfrog_step(x, v, step_size, energy)?;
    }
    Ok(())
}

// ── Property measurements for the check suite ───────────────────────────

/// Max relative deviation of the zero-network operator from the reference
/// leapfrog, compared step by step over `n_steps` single-step trajectories.
pub fn hmc_reduction_error(
    energy: &EnergyModel,
    step_size: f64,
    n_leapfrog: usize,
    n_transitions: usize,
    seed: u64,
) -> f64 {
    let n = energy.dim();
    let params = NetParams::init(n, 4, n_leapfrog, step_size, seed);
    let masks = MaskSchedule::generate(n, n_leapfrog, seed);
    let cfg = IntegratorConfig::new(step_size, n_leapfrog);
    let mut ws = Workspace::new(n, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut max_err = 0.0f64;
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..n_transitions {
        // one full-M trajectory, compared per leapfrog step
        let mut rx = x.clone();
        let mut rv = v.clone();
        let mut lx = x.clone();
        let mut lv = v.clone();
        for t in 1..=n_leapfrog {
            crate::integrator::forward_step(
                &mut lx, &mut lv, t, &params, &masks, energy, &cfg, &mut ws,
            )
            .expect("finite trajectory");
            reference_leapfrog_step(&mut rx, &mut rv, step_size, energy)
                .expect("finite trajectory");
            for i in 0..n {
                let ex = (lx[i] - rx[i]).abs() / rx[i].abs().max(1.0);
                let ev = (lv[i] - rv[i]).abs() / rv[i].abs().max(1.0);
                max_err = max_err.max(ex).max(ev);
            }
        }
        // fresh momentum, keep position: mimics sampling without MH
        x = lx;
        for vi in v.iter_mut() {
            *vi = rng.random_range(-1.0..1.0);
        }
    }
    max_err
}

/// Involution residual: relative state error of F L F L and the absolute
/// sum of the two log-Jacobians.
pub fn involution_residual(
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    state: &AugmentedState,
) -> (f64, f64) {
    let mut ws = Workspace::new(energy.dim(), params.n_hidden());
    let first = apply_operator(state, params, masks, energy, cfg, &mut ws)
        .expect("finite forward pass");
    let flipped = crate::integrator::flip(&first.state);
    let second = apply_operator(&flipped, params, masks, energy, cfg, &mut ws)
        .expect("finite return pass");
    let back = crate::integrator::flip(&second.state);
    let mut err = 0.0f64;
    for i in 0..state.x.len() {
        err = err.max((back.x[i] - state.x[i]).abs() / state.x[i].abs().max(1.0));
        err = err.max((back.v[i] - state.v[i]).abs() / state.v[i].abs().max(1.0));
    }
    (err, (first.log_jacobian + second.log_jacobian).abs())
}

/// |analytic log-Jacobian - finite-difference log|det J|| for the map
/// (x, v) -> (x', v') of the full operator.
pub fn jacobian_fd_error(
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    state: &AugmentedState,
) -> f64 {
    let n = state.x.len();
    let mut ws = Workspace::new(n, params.n_hidden());
    let base = apply_operator(state, params, masks, energy, cfg, &mut ws)
        .expect("finite trajectory");

    let h = 1e-5;
    let dim = 2 * n;
    let mut jac = vec![vec![0.0; dim]; dim];
    for j in 0..dim {
        let mut plus = state.clone();
        let mut minus = state.clone();
        if j < n {
            plus.x[j] += h;
            minus.x[j] -= h;
        } else {
            plus.v[j - n] += h;
            minus.v[j - n] -= h;
        }
        let fp = apply_operator(&plus, params, masks, energy, cfg, &mut ws).unwrap();
        let fm = apply_operator(&minus, params, masks, energy, cfg, &mut ws).unwrap();
        for i in 0..dim {
            let (a, b) = if i < n {
                (fp.state.x[i], fm.state.x[i])
            } else {
                (fp.state.v[i - n], fm.state.v[i - n])
            };
            jac[i][j] = (a - b) / (2.0 * h);
        }
    }
    let fd = log_abs_det(jac);
    (fd - base.log_jacobian).abs()
}

/// log |det| by Gaussian elimination with partial pivoting.
fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col] == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.swap(col, pivot);
        log_det += m[col][col].abs().ln();
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    log_det
}

// ── Check suite ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
}

impl CheckReport {
    fn push(&mut self, name: impl Into<String>, max_error: f64, tolerance: f64) {
        let passed = max_error <= tolerance;
        self.passed &= passed;
        self.entries.push(CheckEntry { name: name.into(), max_error, tolerance, passed });
    }
}

fn randomized_params(n: usize, nh: usize, m: usize, eps: f64, seed: u64) -> NetParams {
    let mut p = NetParams::init(n, nh, m, eps, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1a6);
    for stack in STACKS {
        for f in FIELDS.iter().filter(|f| f.is_head()) {
            let scale = match f {
                Field::LambdaS | Field::LambdaQ => 0.25,
                _ => 0.4,
            };
            for w in p.field_mut(stack, *f) {
                *w = rng.random_range(-scale..scale);
            }
        }
        // nonzero hidden biases keep pre-activations off the relu kink
        for f in [Field::B1, Field::B4] {
            for w in p.field_mut(stack, f) {
                *w = rng.random_range(-0.2..0.2);
            }
        }
    }
    p
}

fn random_state(n: usize, d: i8, rng: &mut ChaCha8Rng) -> AugmentedState {
    AugmentedState::new(
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        d,
    )
}

/// Run every registered structural property at its stated tolerance.
/// `quick` limits configurations to n <= 10, M <= 5.
pub fn check_suite(seed: u64, quick: bool) -> CheckReport {
    let mut report = CheckReport { entries: Vec::new(), passed: true };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // 1. zero networks reduce to the reference leapfrog
    let energy = EnergyModel::std_gaussian(2);
    let steps = if quick { 20 } else { 100 };
    let err = hmc_reduction_error(&energy, 0.1, 10, steps, seed);
    report.push("hmc_reduction", err, 1e-12);

    // 2. the flipped operator is an involution and log-Jacobians cancel
    let dims: &[usize] = if quick { &[2, 10] } else { &[2, 10, 50] };
    let steps_list: &[usize] = if quick { &[1, 5] } else { &[1, 5, 10] };
    let mut max_state_err = 0.0f64;
    let mut max_logjac_err = 0.0f64;
    let mut draws = 0;
    'outer: for &n in dims {
        for &m in steps_list {
            for _ in 0..6 {
                let params = randomized_params(n, 8, m, 0.1, rng.random());
                let masks = MaskSchedule::generate(n, m, rng.random());
                let energy = EnergyModel::std_gaussian(n);
                let cfg = IntegratorConfig::new(0.1, m);
                let d = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
                let state = random_state(n, d, &mut rng);
                let (serr, jerr) = involution_residual(&params, &masks, &energy, &cfg, &state);
                max_state_err = max_state_err.max(serr);
                max_logjac_err = max_logjac_err.max(jerr);
                draws += 1;
                if draws >= 50 {
                    break 'outer;
                }
            }
        }
    }
    report.push("involution_state", max_state_err, 1e-8);
    report.push("involution_log_jacobian", max_logjac_err, 1e-8);

    // 3. the analytic log-Jacobian matches a finite-difference determinant
    let mut max_jac = 0.0f64;
    for m in [1usize, 2] {
        for _ in 0..5 {
            let params = randomized_params(2, 6, m, 0.1, rng.random());
            let masks = MaskSchedule::generate(2, m, rng.random());
            let energy = EnergyModel::std_gaussian(2);
            let cfg = IntegratorConfig::new(0.1, m);
            let d = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
            let state = random_state(2, d, &mut rng);
            max_jac = max_jac.max(jacobian_fd_error(&params, &masks, &energy, &cfg, &state));
        }
    }
    report.push("jacobian_exactness", max_jac, 1e-4);

    // 4. loss gradients match central finite differences
    let n_cfgs = if quick { 5 } else { 20 };
    let err = gradient_fd_error(n_cfgs, seed ^ 0x9e3779b9);
    report.push("loss_gradient", err, 1e-4);

    report
}

/// Max relative loss-gradient error against central finite differences over
/// `n_configs` random small configurations (n <= 4, hidden <= 8, M <= 3).
/// Coordinates below the 1e-8 absolute floor are ignored. Positions are
/// drawn at the target's own scale and the loss scale is matched to the
/// resulting jumps, so the reciprocal term stays well conditioned for
/// central differencing at h = 1e-6; draws whose graph passes within reach
/// of a relu or clamp kink are redrawn, since differences across a
/// subgradient boundary do not estimate either one-sided derivative.
pub fn gradient_fd_error(n_configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < n_configs {
        let n = rng.random_range(1..=4usize);
        let nh = rng.random_range(2..=8usize);
        let m = rng.random_range(1..=3usize);
        let lambda_b = if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
        let params = randomized_params(n, nh, m, 0.05, rng.random());
        let masks = MaskSchedule::generate(n, m, rng.random());
        // targets with O(1) curvature only: the 1e2 spectral spread of the
        // ill-conditioned Gaussian pushes central-difference noise at
        // h = 1e-6 above the comparison floor, drowning the oracle rather
        // than the gradient (the energy module checks its derivatives
        // directly)
        let energy = if rng.random::<f64>() < 0.5 {
            EnergyModel::std_gaussian(n)
        } else {
            crate::energy::EnergySpec::new(crate::energy::EnergyKind::RoughWell, n)
                .build()
                .unwrap()
        };
        let scales: Vec<f64> = energy.true_cov_diag().iter().map(|v| v.sqrt()).collect();
        let scaled_state = |d: i8, rng: &mut ChaCha8Rng| {
            let x = (0..n).map(|i| rng.random_range(-0.5..0.5) * scales[i]).collect();
            let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            AugmentedState::new(x, v, d)
        };
        let d = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
        let p = vec![scaled_state(d, &mut rng)];
        let q = vec![scaled_state(-d, &mut rng)];

        // pre-pass: match the loss scale to the batch's own squared jumps
        // (the loss is zero, and best conditioned, at delta*A = lambda^2)
        let probe = ObjectiveConfig {
            lambda: 1.0,
            lambda_b,
            floor: 1e-6,
            train_step_size: true,
        };
        let pre = batch_objective(&p, &q, &params, &masks, &energy, &probe);
        let mean_da = pre
            .p_outcomes
            .iter()
            .chain(&pre.q_outcomes)
            .map(|o| o.sq_jump * o.accept_prob)
            .sum::<f64>()
            / (pre.p_outcomes.len() + pre.q_outcomes.len()) as f64;
        let ocfg = ObjectiveConfig {
            lambda: mean_da.max(1e-5).sqrt(),
            ..probe
        };

        if crate::objective::batch_kink_distance(&p, &q, &params, &masks, &energy, &ocfg) < 1e-4
        {
            continue;
        }
        checked += 1;

        let res = batch_objective(&p, &q, &params, &masks, &energy, &ocfg);
        let h = 1e-6;
        let mut theta = params.theta.clone();
        for i in 0..theta.len() {
            let orig = theta[i];
            let eval = |theta: &[f64]| {
                let mut pp = params.clone();
                pp.theta.copy_from_slice(theta);
                batch_objective(&p, &q, &pp, &masks, &energy, &ocfg).value
            };
            theta[i] = orig + h;
            let up = eval(&theta);
            theta[i] = orig - h;
            let dn = eval(&theta);
            theta[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let err = (res.grad[i] - fd).abs();
            if err > 1e-8 {
                worst = worst.max(err / res.grad[i].abs().max(fd.abs()).max(1e-12));
            }
        }
    }
    worst
}
