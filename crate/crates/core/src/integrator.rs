//! The augmented leapfrog operator, its exact inverse, and the
//! Metropolis-Hastings-Green acceptance probability.
//!
//! One forward step applies four sub-updates, each a shear: a momentum
//! half-update conditioned on (x, grad U(x), t), two masked position
//! updates conditioned on the frozen complement and the current momentum,
//! and a final momentum half-update. Every sub-update rescales the updated
//! block by an exponential whose log accumulates into the proposal's
//! log-Jacobian. The reverse step solves each sub-update for its pre-update
//! variable, in reverse order, so running t = M..1 with direction -1 inverts
//! the whole operator exactly (up to floating-point roundoff).

use crate::energy::{EnergyError, EnergyModel};
use crate::nets::{encode_time, NetParams, NetScratch, Stack};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("non-finite value after {stage} at leapfrog step {step}")]
    NonFinite { stage: &'static str, step: usize },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("state dimension {got} does not match configuration {expected}")]
    DimMismatch { expected: usize, got: usize },
}

/// Position, momentum and integration direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub d: i8,
}

impl AugmentedState {
    pub fn new(x: Vec<f64>, v: Vec<f64>, d: i8) -> Self {
        assert_eq!(x.len(), v.len());
        assert!(d == 1 || d == -1);
        AugmentedState { x, v, d }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Reverse the direction variable, leaving (x, v) untouched.
pub fn flip(state: &AugmentedState) -> AugmentedState {
    AugmentedState { x: state.x.clone(), v: state.v.clone(), d: -state.d }
}

/// Per-step binary masks, fixed at sampler construction.
///
/// Each mask has exactly floor(n/2) ones; the complement switches which
/// coordinates the two position sub-updates touch. Masks are persisted in
/// checkpoints because redrawing them would break invertibility.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSchedule {
    masks: Vec<Vec<f64>>,
}

impl MaskSchedule {
    /// Deterministic schedule: each mask drawn uniformly from the binary
    /// vectors with floor(n/2) ones.
    pub fn generate(n: usize, n_steps: usize, seed: u64) -> Self {
        assert!(n >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ones = n / 2;
        let masks = (0..n_steps)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                let mut m = vec![0.0; n];
                for &i in &idx[..ones] {
                    m[i] = 1.0;
                }
                m
            })
            .collect();
        MaskSchedule { masks }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        MaskSchedule { masks: rows }
    }

    pub fn n_steps(&self) -> usize {
        self.masks.len()
    }

    pub fn dim(&self) -> usize {
        self.masks[0].len()
    }

    /// Mask for 1-based step index t.
    pub fn mask(&self, t: usize) -> &[f64] {
        &self.masks[t - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.masks
    }
}

/// Step size and trajectory length of the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub step_size: f64,
    pub n_steps: usize,
}

impl IntegratorConfig {
    pub fn new(step_size: f64, n_steps: usize) -> Self {
        assert!(step_size > 0.0 && n_steps >= 1);
        IntegratorConfig { step_size, n_steps }
    }

    /// Config taking the (possibly trained) step size from the parameters.
    pub fn from_params(params: &NetParams) -> Self {
        IntegratorConfig::new(params.step_size(), params.n_steps())
    }
}

/// Output of the full operator: the proposed state and the accumulated
/// log |det Jacobian| of the map (x, v) -> (x', v').
#[derive(Debug, Clone)]
pub struct ProposalResult {
    pub state: AugmentedState,
    pub log_jacobian: f64,
}

/// Scratch buffers so repeated proposals do not allocate.
#[derive(Debug, Clone)]
pub struct Workspace {
    net: NetScratch,
    grad: Vec<f64>,
    masked: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize, n_hidden: usize) -> Self {
        Workspace {
            net: NetScratch::new(n, n_hidden),
            grad: vec![0.0; n],
            masked: vec![0.0; n],
        }
    }
}

fn check_finite(
    xs: &[f64],
    stage: &'static str,
    step: usize,
) -> Result<(), IntegratorError> {
    if xs.iter().any(|v| !v.is_finite()) {
        Err(IntegratorError::NonFinite { stage, step })
    } else {
        Ok(())
    }
}

/// One forward (d = +1) leapfrog step at 1-based step index `t`, updating
/// `x` and `v` in place. Returns this step's log-Jacobian increment.
pub fn forward_step(
    x: &mut [f64],
    v: &mut [f64],
    t: usize,
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
) -> Result<f64, IntegratorError> {
    let n = x.len();
    let eps = cfg.step_size;
    let tcode = encode_time(t, cfg.n_steps).expect("step index within trajectory");
    let mut log_jac = 0.0;

    // momentum half-update conditioned on (x, grad U(x), t)
    energy.grad_into(x, &mut ws.grad)?;
    params.forward(Stack::V, x, &ws.grad, tcode, &mut ws.net);
    for i in 0..n {
        log_jac += 0.5 * eps * ws.net.s[i];
        v[i] = v[i] * (0.5 * eps * ws.net.s[i]).exp()
            - 0.5 * eps * (ws.grad[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]);
    }
    check_finite(v, "first momentum half-update", t)?;

    // first position update: only masked coordinates move
    let mask = masks.mask(t);
    for i in 0..n {
        ws.masked[i] = x[i] * (1.0 - mask[i]);
    }
    params.forward(Stack::X, &ws.masked, v, tcode, &mut ws.net);
    for i in 0..n {
        if mask[i] == 1.0 {
            log_jac += eps * ws.net.s[i];
            x[i] = x[i] * (eps * ws.net.s[i]).exp()
                + eps * (v[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]);
        }
    }
    check_finite(x, "first position update", t)?;

    // second position update: the complementary coordinates move
    for i in 0..n {
        ws.masked[i] = x[i] * mask[i];
    }
    params.forward(Stack::X, &ws.masked, v, tcode, &mut ws.net);
    for i in 0..n {
        if mask[i] == 0.0 {
            log_jac += eps * ws.net.s[i];
            x[i] = x[i] * (eps * ws.net.s[i]).exp()
                + eps * (v[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]);
        }
    }
    check_finite(x, "second position update", t)?;

    // momentum half-update at the new position
    energy.grad_into(x, &mut ws.grad)?;
    params.forward(Stack::V, x, &ws.grad, tcode, &mut ws.net);
    for i in 0..n {
        log_jac += 0.5 * eps * ws.net.s[i];
        v[i] = v[i] * (0.5 * eps * ws.net.s[i]).exp()
            - 0.5 * eps * (ws.grad[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]);
    }
    check_finite(v, "second momentum half-update", t)?;

    Ok(log_jac)
}

/// Exact algebraic inverse of [`forward_step`] (d = -1): the four
/// sub-updates are solved for their pre-update variable and applied in
/// reverse order. The log-Jacobian increment is the negation of the
/// corresponding forward increment.
pub fn reverse_step(
    x: &mut [f64],
    v: &mut [f64],
    t: usize,
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
) -> Result<f64, IntegratorError> {
    let n = x.len();
    let eps = cfg.step_size;
    let tcode = encode_time(t, cfg.n_steps).expect("step index within trajectory");
    let mut log_jac = 0.0;

    // invert the trailing momentum half-update
    energy.grad_into(x, &mut ws.grad)?;
    params.forward(Stack::V, x, &ws.grad, tcode, &mut ws.net);
    for i in 0..n {
        log_jac -= 0.5 * eps * ws.net.s[i];
        v[i] = (v[i] + 0.5 * eps * (ws.grad[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]))
            * (-0.5 * eps * ws.net.s[i]).exp();
    }
    check_finite(v, "inverse second momentum half-update", t)?;

    // invert the second position update (complement coordinates)
    let mask = masks.mask(t);
    for i in 0..n {
        ws.masked[i] = x[i] * mask[i];
    }
    params.forward(Stack::X, &ws.masked, v, tcode, &mut ws.net);
    for i in 0..n {
        if mask[i] == 0.0 {
            log_jac -= eps * ws.net.s[i];
            x[i] = (x[i] - eps * (v[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]))
                * (-eps * ws.net.s[i]).exp();
        }
    }
    check_finite(x, "inverse second position update", t)?;

    // invert the first position update (masked coordinates)
    for i in 0..n {
        ws.masked[i] = x[i] * (1.0 - mask[i]);
    }
    params.forward(Stack::X, &ws.masked, v, tcode, &mut ws.net);
    for i in 0..n {
        if mask[i] == 1.0 {
            log_jac -= eps * ws.net.s[i];
            x[i] = (x[i] - eps * (v[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]))
                * (-eps * ws.net.s[i]).exp();
        }
    }
    check_finite(x, "inverse first position update", t)?;

    // invert the leading momentum half-update
    energy.grad_into(x, &mut ws.grad)?;
    params.forward(Stack::V, x, &ws.grad, tcode, &mut ws.net);
    for i in 0..n {
        log_jac -= 0.5 * eps * ws.net.s[i];
        v[i] = (v[i] + 0.5 * eps * (ws.grad[i] * (eps * ws.net.q[i]).exp() + ws.net.t[i]))
            * (-0.5 * eps * ws.net.s[i]).exp();
    }
    check_finite(v, "inverse first momentum half-update", t)?;

    Ok(log_jac)
}

/// Run the full operator: M forward steps for d = +1, or the M inverse
/// steps from t = M down to 1 for d = -1. The direction component is left
/// unchanged; the log-Jacobian is the signed sum of per-step increments.
pub fn apply_operator(
    state: &AugmentedState,
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
) -> Result<ProposalResult, IntegratorError> {
    if state.dim() != energy.dim() {
        return Err(IntegratorError::DimMismatch {
            expected: energy.dim(),
            got: state.dim(),
        });
    }
    let mut x = state.x.clone();
    let mut v = state.v.clone();
    let mut log_jacobian = 0.0;
    if state.d == 1 {
        for t in 1..=cfg.n_steps {
            log_jacobian += forward_step(&mut x, &mut v, t, params, masks, energy, cfg, ws)?;
        }
    } else {
        for t in (1..=cfg.n_steps).rev() {
            log_jacobian += reverse_step(&mut x, &mut v, t, params, masks, energy, cfg, ws)?;
        }
    }
    Ok(ProposalResult {
        state: AugmentedState { x, v, d: state.d },
        log_jacobian,
    })
}

/// Metropolis-Hastings-Green acceptance probability for a proposal, plus a
/// divergence flag. A non-finite log-ratio yields probability zero with
/// the flag set; the uniform direction density cancels and is excluded.
pub fn accept_prob(
    state: &AugmentedState,
    proposal: &ProposalResult,
    energy: &EnergyModel,
) -> (f64, bool) {
    let before = match energy.joint_log_prob(&state.x, &state.v) {
        Ok(lp) => lp,
        Err(_) => return (0.0, true),
    };
    let after = match energy.joint_log_prob(&proposal.state.x, &proposal.state.v) {
        Ok(lp) => lp,
        Err(_) => return (0.0, true),
    };
    let log_ratio = after - before + proposal.log_jacobian;
    if !log_ratio.is_finite() {
        return (0.0, true);
    }
    (log_ratio.exp().min(1.0), false)
}
