//! Differentiable construction of the training objective.
//!
//! Re-expresses the augmented leapfrog, the acceptance probability, and the
//! squared-jump loss as tape primitives so one reverse sweep yields the
//! gradient with respect to every weight (and, optionally, the
//! log-parameterized step size). The plain integrator in [`crate::integrator`]
//! and this taped rebuild implement the same arithmetic; tests pin them
//! against each other.
//!
//! The batch objective averages per-element losses. Elements are built on
//! independent tapes, evaluated in parallel, and reduced in index order so
//! results do not depend on the worker count. An element whose proposal
//! diverges (non-finite anywhere) contributes the floored loss value with
//! zero gradient, mirroring rejection with acceptance zero.

use crate::energy::EnergyModel;
use crate::integrator::{AugmentedState, MaskSchedule};
use crate::nets::{encode_time, Field, Layout, NetParams, Stack, TIME_DIM};
use crate::tape::{Slot, Tape, TapeError};
use rayon::prelude::*;

/// Loss shape and step-size handling for objective construction.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    /// Characteristic jump scale; the loss vanishes at delta*A = lambda^2.
    pub lambda: f64,
    /// Weight of the burn-in (fresh initialization) term.
    pub lambda_b: f64,
    /// Lower clamp on delta*A inside the reciprocal.
    pub floor: f64,
    /// Record the step size as a trainable parameter rather than a constant.
    pub train_step_size: bool,
}

impl ObjectiveConfig {
    pub fn new(lambda: f64, lambda_b: f64) -> Self {
        ObjectiveConfig { lambda, lambda_b, floor: 1e-6, train_step_size: true }
    }

    /// Loss value assigned to a fully rejected or divergent proposal.
    pub fn floored_loss(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        l2 / self.floor - self.floor / l2
    }
}

struct StackSlots {
    w1: Slot,
    w2: Slot,
    w3: Slot,
    b1: Slot,
    w4: Slot,
    b4: Slot,
    ws: Slot,
    bs: Slot,
    wq: Slot,
    bq: Slot,
    wt: Slot,
    bt: Slot,
    lam_s: Slot,
    lam_q: Slot,
}

struct ParamSlots {
    v: StackSlots,
    x: StackSlots,
    eps: Slot,
    half_eps: Slot,
    layout: Layout,
}

fn register_stack(tape: &mut Tape, params: &NetParams, stack: Stack) -> StackSlots {
    let layout = params.layout();
    let mut get = |f: Field| {
        tape.param(&params.theta, layout.offset(stack, f), layout.field_len(f))
    };
    StackSlots {
        w1: get(Field::W1),
        w2: get(Field::W2),
        w3: get(Field::W3),
        b1: get(Field::B1),
        w4: get(Field::W4),
        b4: get(Field::B4),
        ws: get(Field::Ws),
        bs: get(Field::Bs),
        wq: get(Field::Wq),
        bq: get(Field::Bq),
        wt: get(Field::Wt),
        bt: get(Field::Bt),
        lam_s: get(Field::LambdaS),
        lam_q: get(Field::LambdaQ),
    }
}

fn register_params(tape: &mut Tape, params: &NetParams, train_step_size: bool) -> ParamSlots {
    let layout = params.layout();
    let v = register_stack(tape, params, Stack::V);
    let x = register_stack(tape, params, Stack::X);
    let eps = if train_step_size {
        let log_eps = tape.param(&params.theta, layout.log_eps_offset(), 1);
        tape.exp(log_eps)
    } else {
        tape.constant_scalar(params.step_size())
    };
    let half_eps = tape.scale(eps, 0.5);
    ParamSlots { v, x, eps, half_eps, layout }
}

/// One stack evaluation on the tape: returns (S, Q, T) slots.
fn taped_forward(
    tape: &mut Tape,
    slots: &StackSlots,
    layout: Layout,
    a: Slot,
    b: Slot,
    tcode: Slot,
) -> (Slot, Slot, Slot) {
    let (n, nh) = (layout.n, layout.n_hidden);
    let za = tape.matvec(slots.w1, a, nh, n);
    let zb = tape.matvec(slots.w2, b, nh, n);
    let zt = tape.matvec(slots.w3, tcode, nh, TIME_DIM);
    let s1 = tape.add(za, zb);
    let s2 = tape.add(s1, zt);
    let pre1 = tape.add(s2, slots.b1);
    let h1 = tape.relu(pre1);
    let z2 = tape.matvec(slots.w4, h1, nh, nh);
    let pre2 = tape.add(z2, slots.b4);
    let h2 = tape.relu(pre2);

    let zs = tape.matvec(slots.ws, h2, n, nh);
    let zs = tape.add(zs, slots.bs);
    let ts = tape.tanh(zs);
    let s = tape.scalar_mul(slots.lam_s, ts);

    let zq = tape.matvec(slots.wq, h2, n, nh);
    let zq = tape.add(zq, slots.bq);
    let tq = tape.tanh(zq);
    let q = tape.scalar_mul(slots.lam_q, tq);

    let zt2 = tape.matvec(slots.wt, h2, n, nh);
    let t = tape.add(zt2, slots.bt);
    (s, q, t)
}

struct StepConsts {
    tcode: Slot,
    mask: Slot,
    mask_bar: Slot,
}

/// Per-step constants (time codes and masks), registered once per tape.
fn step_consts(
    tape: &mut Tape,
    masks: &MaskSchedule,
    n_steps: usize,
) -> Vec<StepConsts> {
    (1..=n_steps)
        .map(|t| {
            let code = encode_time(t, n_steps).expect("valid step index");
            let tcode = tape.constant(&code);
            let m = masks.mask(t);
            let mbar: Vec<f64> = m.iter().map(|&b| 1.0 - b).collect();
            StepConsts {
                tcode,
                mask: tape.constant(m),
                mask_bar: tape.constant(&mbar),
            }
        })
        .collect()
}

/// Momentum half-update on the tape. `sign = 1.0` applies the forward form,
/// `sign = -1.0` its algebraic inverse. Returns the new momentum and the
/// signed log-Jacobian contribution.
fn taped_momentum_update(
    tape: &mut Tape,
    ps: &ParamSlots,
    x: Slot,
    v: Slot,
    tcode: Slot,
    sign: f64,
) -> Result<(Slot, Slot), TapeError> {
    let grad = tape.energy_grad(x)?;
    let (s, q, t) = taped_forward(tape, &ps.v, ps.layout, x, grad, tcode);
    let eq = tape.scalar_mul(ps.eps, q);
    let eq = tape.exp(eq);
    let geq = tape.mul(grad, eq);
    let force = tape.add(geq, t);
    let force = tape.scalar_mul(ps.half_eps, force);
    let es = tape.scalar_mul(ps.half_eps, s);
    let sum_s = tape.sum(s);
    let log_jac = tape.mul(ps.half_eps, sum_s);
    if sign > 0.0 {
        // v' = v .* exp(eps/2 S) - eps/2 (grad .* exp(eps Q) + T)
        let es = tape.exp(es);
        let scaled = tape.mul(v, es);
        Ok((tape.sub(scaled, force), log_jac))
    } else {
        // v = (v' + eps/2 (grad .* exp(eps Q) + T)) .* exp(-eps/2 S)
        let neg = tape.scale(es, -1.0);
        let es = tape.exp(neg);
        let shifted = tape.add(v, force);
        let out = tape.mul(shifted, es);
        Ok((out, tape.scale(log_jac, -1.0)))
    }
}

/// Masked position update on the tape; `moving` selects the coordinates
/// being rewritten and `frozen` its complement (the network conditioning
/// set). Forward for `sign = 1.0`, inverse for `sign = -1.0`.
fn taped_position_update(
    tape: &mut Tape,
    ps: &ParamSlots,
    x: Slot,
    v: Slot,
    tcode: Slot,
    moving: Slot,
    frozen: Slot,
    sign: f64,
) -> (Slot, Slot) {
    let x_frozen = tape.mul(x, frozen);
    let (s, q, t) = taped_forward(tape, &ps.x, ps.layout, x_frozen, v, tcode);
    let eq = tape.scalar_mul(ps.eps, q);
    let eq = tape.exp(eq);
    let veq = tape.mul(v, eq);
    let drift = tape.add(veq, t);
    let drift = tape.scalar_mul(ps.eps, drift);
    let es = tape.scalar_mul(ps.eps, s);
    let masked_s = tape.mul(moving, s);
    let sum_ms = tape.sum(masked_s);
    let log_jac = tape.mul(ps.eps, sum_ms);
    let updated = if sign > 0.0 {
        // x .* exp(eps S) + eps (v .* exp(eps Q) + T)
        let es = tape.exp(es);
        let scaled = tape.mul(x, es);
        tape.add(scaled, drift)
    } else {
        // (x - eps (v .* exp(eps Q) + T)) .* exp(-eps S)
        let neg = tape.scale(es, -1.0);
        let es = tape.exp(neg);
        let shifted = tape.sub(x, drift);
        tape.mul(shifted, es)
    };
    // recombine: untouched coordinates keep their bits
    let keep = tape.mul(x, frozen);
    let moved = tape.mul(updated, moving);
    let x_new = tape.add(keep, moved);
    let log_jac = if sign > 0.0 { log_jac } else { tape.scale(log_jac, -1.0) };
    (x_new, log_jac)
}

/// Full operator on the tape: returns (x, v, log-Jacobian) slots.
fn taped_apply_operator(
    tape: &mut Tape,
    ps: &ParamSlots,
    consts: &[StepConsts],
    mut x: Slot,
    mut v: Slot,
    d: i8,
) -> Result<(Slot, Slot, Slot), TapeError> {
    let mut log_jac = tape.constant_scalar(0.0);
    if d == 1 {
        for sc in consts {
            let (v1, lj1) = taped_momentum_update(tape, ps, x, v, sc.tcode, 1.0)?;
            v = v1;
            let (x1, lj2) =
                taped_position_update(tape, ps, x, v, sc.tcode, sc.mask, sc.mask_bar, 1.0);
            x = x1;
            let (x2, lj3) =
                taped_position_update(tape, ps, x, v, sc.tcode, sc.mask_bar, sc.mask, 1.0);
            x = x2;
            let (v2, lj4) = taped_momentum_update(tape, ps, x, v, sc.tcode, 1.0)?;
            v = v2;
            for lj in [lj1, lj2, lj3, lj4] {
                log_jac = tape.add(log_jac, lj);
            }
        }
    } else {
        for sc in consts.iter().rev() {
            let (v1, lj1) = taped_momentum_update(tape, ps, x, v, sc.tcode, -1.0)?;
            v = v1;
            let (x1, lj2) =
                taped_position_update(tape, ps, x, v, sc.tcode, sc.mask_bar, sc.mask, -1.0);
            x = x1;
            let (x2, lj3) =
                taped_position_update(tape, ps, x, v, sc.tcode, sc.mask, sc.mask_bar, -1.0);
            x = x2;
            let (v2, lj4) = taped_momentum_update(tape, ps, x, v, sc.tcode, -1.0)?;
            v = v2;
            for lj in [lj1, lj2, lj3, lj4] {
                log_jac = tape.add(log_jac, lj);
            }
        }
    }
    Ok((x, v, log_jac))
}

struct ElementGraph {
    loss: Slot,
    accept: Slot,
    sq_jump: Slot,
    x_out: Slot,
    v_out: Slot,
}

/// Loss of one element: proposal, acceptance, squared jump, reciprocal loss.
fn taped_element(
    tape: &mut Tape,
    ps: &ParamSlots,
    consts: &[StepConsts],
    state: &AugmentedState,
    ocfg: &ObjectiveConfig,
) -> Result<ElementGraph, TapeError> {
    let x0 = tape.constant(&state.x);
    let v0 = tape.constant(&state.v);
    let (x_out, v_out, log_jac) = taped_apply_operator(tape, ps, consts, x0, v0, state.d)?;

    let u0 = tape.energy_val(x0)?;
    let k0 = tape.dot(v0, v0);
    let h0 = tape.scale(k0, 0.5);
    let e0 = tape.add(u0, h0);

    let u1 = tape.energy_val(x_out)?;
    let k1 = tape.dot(v_out, v_out);
    let h1 = tape.scale(k1, 0.5);
    let e1 = tape.add(u1, h1);

    // log ratio = (-e1) - (-e0) + log_jac
    let de = tape.sub(e0, e1);
    let log_ratio = tape.add(de, log_jac);
    let ratio = tape.exp(log_ratio);
    let accept = tape.min_const(ratio, 1.0);

    let diff = tape.sub(x0, x_out);
    let sq_jump = tape.dot(diff, diff);

    let da = tape.mul(sq_jump, accept);
    let floored = tape.max_const(da, ocfg.floor);
    let inv = tape.recip(floored);
    let l2 = ocfg.lambda * ocfg.lambda;
    let first = tape.scale(inv, l2);
    let second = tape.scale(floored, 1.0 / l2);
    let loss = tape.sub(first, second);

    Ok(ElementGraph { loss, accept, sq_jump, x_out, v_out })
}

/// What one batch element produced, read back off its tape.
#[derive(Debug, Clone)]
pub struct ElementOutcome {
    pub loss: f64,
    pub accept_prob: f64,
    pub sq_jump: f64,
    pub divergent: bool,
    /// The flipped proposal F L xi, ready for the Metropolis update; absent
    /// when the proposal diverged.
    pub proposal: Option<AugmentedState>,
}

impl ElementOutcome {
    fn divergent(ocfg: &ObjectiveConfig) -> Self {
        ElementOutcome {
            loss: ocfg.floored_loss(),
            accept_prob: 0.0,
            sq_jump: 0.0,
            divergent: true,
            proposal: None,
        }
    }
}

/// Value, gradient and per-element outcomes of the batch objective.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub value: f64,
    pub grad: Vec<f64>,
    pub p_outcomes: Vec<ElementOutcome>,
    pub q_outcomes: Vec<ElementOutcome>,
}

fn element_outcome(tape: &Tape, state: &AugmentedState, g: &ElementGraph) -> ElementOutcome {
    let x = tape.value(g.x_out).to_vec();
    let v = tape.value(g.v_out).to_vec();
    ElementOutcome {
        loss: tape.scalar(g.loss),
        accept_prob: tape.scalar(g.accept),
        sq_jump: tape.scalar(g.sq_jump),
        divergent: false,
        proposal: Some(AugmentedState { x, v, d: -state.d }),
    }
}

/// Mean loss over the persistent batch plus `lambda_b` times the mean over
/// fresh draws, with its parameter gradient. `q_batch` may be empty when
/// `lambda_b` is zero. Element tapes evaluate in parallel; the reduction
/// runs in index order, so the result is bit-reproducible.
pub fn batch_objective(
    p_batch: &[AugmentedState],
    q_batch: &[AugmentedState],
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    ocfg: &ObjectiveConfig,
) -> BatchObjective {
    assert!(!p_batch.is_empty(), "persistent batch must be non-empty");
    let use_q = ocfg.lambda_b != 0.0;
    if use_q {
        assert_eq!(p_batch.len(), q_batch.len(), "batches must pair up");
    }
    let n_params = params.n_params();

    struct ElementResult {
        p: ElementOutcome,
        q: Option<ElementOutcome>,
        grad: Option<Vec<f64>>,
    }

    let results: Vec<ElementResult> = p_batch
        .par_iter()
        .enumerate()
        .map(|(i, p_state)| {
            let mut tape = Tape::new(n_params, Some(energy.clone()));
            let ps = register_params(&mut tape, params, ocfg.train_step_size);
            let consts = step_consts(&mut tape, masks, masks.n_steps());

            let p_graph = taped_element(&mut tape, &ps, &consts, p_state, ocfg)
                .ok()
                .filter(|g| tape.scalar(g.loss).is_finite());
            let q_graph = if use_q {
                taped_element(&mut tape, &ps, &consts, &q_batch[i], ocfg)
                    .ok()
                    .filter(|g| tape.scalar(g.loss).is_finite())
            } else {
                None
            };

            let p_out = p_graph
                .as_ref()
                .map(|g| element_outcome(&tape, p_state, g))
                .unwrap_or_else(|| ElementOutcome::divergent(ocfg));
            let q_out = use_q.then(|| {
                q_graph
                    .as_ref()
                    .map(|g| element_outcome(&tape, &q_batch[i], g))
                    .unwrap_or_else(|| ElementOutcome::divergent(ocfg))
            });

            // element root: loss_p + lambda_b * loss_q, skipping divergent parts
            let mut root = p_graph.as_ref().map(|g| g.loss);
            if let Some(qg) = q_graph.as_ref() {
                let scaled = tape.scale(qg.loss, ocfg.lambda_b);
                root = Some(match root {
                    Some(r) => tape.add(r, scaled),
                    None => scaled,
                });
            }
            let grad = root.and_then(|r| tape.gradient(r).ok());
            ElementResult { p: p_out, q: q_out, grad }
        })
        .collect();

    let n = p_batch.len() as f64;
    let mut grad = vec![0.0; n_params];
    let mut value = 0.0;
    let mut p_outcomes = Vec::with_capacity(p_batch.len());
    let mut q_outcomes = Vec::new();
    for r in results {
        value += r.p.loss;
        if let Some(q) = r.q {
            value += ocfg.lambda_b * q.loss;
            q_outcomes.push(q);
        }
        if let Some(g) = r.grad {
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        p_outcomes.push(r.p);
    }
    value /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    BatchObjective { value, grad, p_outcomes, q_outcomes }
}

/// Smallest distance of any relu or clamp input to its kink over the whole
/// batch graph. Central differences of [`batch_objective`] straddle a
/// subgradient boundary (and stop matching the reverse-mode gradient)
/// whenever a probe step can cross one, so difference-based checks should
/// skip configurations where this distance is comparable to the step.
pub fn batch_kink_distance(
    p_batch: &[AugmentedState],
    q_batch: &[AugmentedState],
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    ocfg: &ObjectiveConfig,
) -> f64 {
    let use_q = ocfg.lambda_b != 0.0;
    let mut min = f64::INFINITY;
    for (i, p_state) in p_batch.iter().enumerate() {
        let mut tape = Tape::new(params.n_params(), Some(energy.clone()));
        let ps = register_params(&mut tape, params, ocfg.train_step_size);
        let consts = step_consts(&mut tape, masks, masks.n_steps());
        let _ = taped_element(&mut tape, &ps, &consts, p_state, ocfg);
        if use_q {
            let _ = taped_element(&mut tape, &ps, &consts, &q_batch[i], ocfg);
        }
        min = min.min(tape.min_kink_distance());
    }
    min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{accept_prob, apply_operator, IntegratorConfig, Workspace};
    use crate::nets::{Field, FIELDS, STACKS};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized_params(
        n: usize,
        nh: usize,
        m: usize,
        eps: f64,
        seed: u64,
        head_scale: f64,
    ) -> NetParams {
        let mut p = NetParams::init(n, nh, m, eps, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ab);
        for stack in STACKS {
            for f in FIELDS.iter().filter(|f| f.is_head()) {
                let scale = match f {
                    Field::LambdaS | Field::LambdaQ => head_scale * 0.6,
                    _ => head_scale,
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

    fn random_state(n: usize, d: i8, seed: u64) -> AugmentedState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentedState::new(
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            d,
        )
    }

    /// The taped operator and the plain integrator must produce the same
    /// proposal, log-Jacobian and acceptance probability.
    #[test]
    fn taped_and_plain_paths_agree() {
        for (n, m, d, seed) in
            [(2usize, 1usize, 1i8, 1u64), (3, 4, 1, 2), (3, 4, -1, 3), (5, 2, -1, 4)]
        {
            let params = randomized_params(n, 6, m, 0.1, seed, 0.4);
            let masks = MaskSchedule::generate(n, m, seed + 50);
            let energy = EnergyModel::std_gaussian(n);
            let cfg = IntegratorConfig::new(params.step_size(), m);
            let state = random_state(n, d, seed + 60);

            let mut ws = Workspace::new(n, 6);
            let plain = apply_operator(&state, &params, &masks, &energy, &cfg, &mut ws).unwrap();
            let (plain_a, _) = accept_prob(&state, &plain, &energy);

            let mut tape = Tape::new(params.n_params(), Some(energy.clone()));
            let ps = register_params(&mut tape, &params, true);
            let consts = step_consts(&mut tape, &masks, m);
            let ocfg = ObjectiveConfig::new(0.5, 0.0);
            let g = taped_element(&mut tape, &ps, &consts, &state, &ocfg).unwrap();
            let gx = tape.value(g.x_out);
            let gv = tape.value(g.v_out);
            for i in 0..n {
                assert!((gx[i] - plain.state.x[i]).abs() < 1e-13, "x[{i}]");
                assert!((gv[i] - plain.state.v[i]).abs() < 1e-13, "v[{i}]");
            }
            assert!((tape.scalar(g.accept) - plain_a).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_deterministic_and_matches_loss_term() {
        let n = 2;
        let params = randomized_params(n, 5, 2, 0.1, 9, 0.3);
        let masks = MaskSchedule::generate(n, 2, 1);
        let energy = EnergyModel::std_gaussian(n);
        let ocfg = ObjectiveConfig::new(0.7, 0.0);
        let batch = vec![random_state(n, 1, 10)];

        let a = batch_objective(&batch, &[], &params, &masks, &energy, &ocfg);
        let b = batch_objective(&batch, &[], &params, &masks, &energy, &ocfg);
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad, b.grad);

        // single element: the objective equals that element's loss term
        let o = &a.p_outcomes[0];
        let da = (o.sq_jump * o.accept_prob).max(ocfg.floor);
        let l2 = ocfg.lambda * ocfg.lambda;
        let expect = l2 / da - da / l2;
        assert!((a.value - expect).abs() < 1e-12);
    }

    #[test]
    fn lambda_b_zero_ignores_q_batch() {
        let n = 2;
        let params = randomized_params(n, 4, 1, 0.1, 3, 0.3);
        let masks = MaskSchedule::generate(n, 1, 2);
        let energy = EnergyModel::std_gaussian(n);
        let batch = vec![random_state(n, 1, 20), random_state(n, -1, 21)];
        let ocfg = ObjectiveConfig::new(0.5, 0.0);
        let res = batch_objective(&batch, &[], &params, &masks, &energy, &ocfg);
        assert!(res.q_outcomes.is_empty());
        assert_eq!(res.p_outcomes.len(), 2);
    }

    #[test]
    fn burn_in_term_scales_with_lambda_b() {
        let n = 2;
        let params = randomized_params(n, 4, 1, 0.1, 5, 0.3);
        let masks = MaskSchedule::generate(n, 1, 6);
        let energy = EnergyModel::std_gaussian(n);
        let p = vec![random_state(n, 1, 30)];
        let q = vec![random_state(n, -1, 31)];
        let base = ObjectiveConfig::new(0.5, 0.0);
        let with_q = ObjectiveConfig { lambda_b: 2.0, ..base };
        let r0 = batch_objective(&p, &q, &params, &masks, &energy, &base);
        let r1 = batch_objective(&p, &q, &params, &masks, &energy, &with_q);
        let q_loss = r1.q_outcomes[0].loss;
        assert!((r1.value - (r0.value + 2.0 * q_loss)).abs() < 1e-12);
    }

    /// Full-loss gradients against central finite differences over every
    /// parameter coordinate, including the log step size, in both
    /// integration directions and with the burn-in term active. The loss
    /// scale is chosen so delta * accept sits near lambda^2, keeping the
    /// reciprocal term well conditioned for differencing at h = 1e-6.
    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (1usize, 3usize, 1usize, 1i8, 0.0, 101u64),
            (2, 4, 2, 1, 0.0, 102),
            (2, 4, 2, -1, 1.0, 103),
            (3, 5, 3, -1, 0.5, 104),
        ];
        for (n, nh, m, d, lambda_b, case_seed) in cases {
            let energy = EnergyModel::std_gaussian(n);
            // skip draws whose graph runs too close to a relu/clamp kink for
            // finite differences at h = 1e-6 to measure a derivative; match
            // the loss scale to the measured jumps so the reciprocal term
            // stays well conditioned
            let mut seed = case_seed;
            let (params, masks, p, q, ocfg) = loop {
                let params = randomized_params(n, nh, m, 0.05, seed, 0.25);
                let masks = MaskSchedule::generate(n, m, seed + 1);
                let p = vec![random_state(n, d, seed + 2), random_state(n, -d, seed + 3)];
                let q = vec![random_state(n, -d, seed + 4), random_state(n, d, seed + 5)];
                let probe =
                    ObjectiveConfig { lambda: 1.0, lambda_b, floor: 1e-6, train_step_size: true };
                let pre = batch_objective(&p, &q, &params, &masks, &energy, &probe);
                let mean_da = pre
                    .p_outcomes
                    .iter()
                    .chain(&pre.q_outcomes)
                    .map(|o| o.sq_jump * o.accept_prob)
                    .sum::<f64>()
                    / (pre.p_outcomes.len() + pre.q_outcomes.len()) as f64;
                let ocfg = ObjectiveConfig { lambda: mean_da.max(1e-5).sqrt(), ..probe };
                if batch_kink_distance(&p, &q, &params, &masks, &energy, &ocfg) >= 1e-4 {
                    break (params, masks, p, q, ocfg);
                }
                seed += 1000;
            };

            let res = batch_objective(&p, &q, &params, &masks, &energy, &ocfg);
            let eval = |theta: &[f64]| {
                let mut pp = params.clone();
                pp.theta.copy_from_slice(theta);
                batch_objective(&p, &q, &pp, &masks, &energy, &ocfg).value
            };
            let h = 1e-6;
            let mut theta = params.theta.clone();
            for i in 0..theta.len() {
                let orig = theta[i];
                theta[i] = orig + h;
                let up = eval(&theta);
                theta[i] = orig - h;
                let dn = eval(&theta);
                theta[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let err = (res.grad[i] - fd).abs();
                let rel = err / res.grad[i].abs().max(fd.abs()).max(1e-12);
                assert!(
                    rel <= 1e-4 || err <= 1e-8,
                    "case ({n},{nh},{m},{d},{lambda_b}) param {i}: grad={} fd={fd}",
                    res.grad[i]
                );
            }
        }
    }

    #[test]
    fn divergent_elements_fall_back_to_the_floored_loss() {
        let n = 2;
        // monstrous step size guarantees overflow on a stiff target
        let params = NetParams::init(n, 4, 1, 1e150, 0);
        let masks = MaskSchedule::generate(n, 1, 0);
        let energy = crate::energy::EnergySpec::new(crate::energy::EnergyKind::Icg, n)
            .build()
            .unwrap();
        let ocfg = ObjectiveConfig::new(0.5, 0.0);
        let batch = vec![AugmentedState::new(vec![1.0, 1.0], vec![1.0, 1.0], 1)];
        let res = batch_objective(&batch, &[], &params, &masks, &energy, &ocfg);
        assert!(res.p_outcomes[0].divergent);
        assert!(res.p_outcomes[0].proposal.is_none());
        assert_eq!(res.value, ocfg.floored_loss());
        assert!(res.grad.iter().all(|&g| g == 0.0));
    }
}
