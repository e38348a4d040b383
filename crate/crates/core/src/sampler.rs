//! Markov-chain simulation: the momentum/direction resampling operator,
//! the accept/reject application of the flipped leapfrog operator, and
//! multi-chain runs producing traces.
//!
//! Randomness is consumed in a fixed, documented order from one stream per
//! chain: each transition draws n standard normals and one uniform for the
//! auxiliary resampling, then one uniform for the Metropolis test. Streams
//! are ChaCha8 counter streams keyed by (seed, chain index), so traces are
//! bit-reproducible no matter how chains are scheduled across workers.

use crate::energy::EnergyModel;
use crate::integrator::{
    accept_prob, apply_operator, flip, AugmentedState, IntegratorConfig, IntegratorError,
    MaskSchedule, Workspace,
};
use crate::nets::NetParams;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("n_steps must be >= 1")]
    EmptyRun,
    #[error("chain dimension {got} does not match model dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("trace export failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Seeded per-chain random stream with a documented draw order.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Resample momentum from N(0, I) and direction uniformly from {-1, +1},
/// leaving the position bits untouched.
pub fn resample_aux(state: &mut AugmentedState, rng: &mut RngStream) {
    rng.fill_standard_normal(&mut state.v);
    state.d = if rng.uniform() < 0.5 { 1 } else { -1 };
}

/// Outcome of a single Metropolis-Hastings transition.
#[derive(Debug, Clone, Copy)]
pub struct TransitionResult {
    pub accepted: bool,
    pub accept_prob: f64,
    /// Squared position jump of the proposal, whether or not it was accepted.
    pub sq_jump: f64,
    pub divergent: bool,
}

/// Propose the flipped-operator state and accept it with the MHG
/// probability, consuming exactly one uniform draw. Divergent proposals are
/// rejected with probability zero. On rejection the state is unchanged.
pub fn transition(
    state: &mut AugmentedState,
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    ws: &mut Workspace,
    rng: &mut RngStream,
) -> TransitionResult {
    let (proposal, prob, divergent) =
        match apply_operator(state, params, masks, energy, cfg, ws) {
            Ok(prop) => {
                let (a, div) = accept_prob(state, &prop, energy);
                (Some(prop), a, div)
            }
            Err(_) => (None, 0.0, true),
        };
    let sq_jump = proposal
        .as_ref()
        .map(|p| {
            state
                .x
                .iter()
                .zip(&p.state.x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .unwrap_or(0.0);

    let u = rng.uniform();
    let accepted = u < prob;
    if accepted {
        let prop = proposal.expect("accepted proposal exists");
        *state = flip(&prop.state);
    }
    TransitionResult { accepted, accept_prob: prob, sq_jump, divergent }
}

/// Ordered record of one chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub positions: Vec<Vec<f64>>,
    pub accepts: Vec<bool>,
    pub accept_probs: Vec<f64>,
    pub sq_jumps: Vec<f64>,
    pub divergences: usize,
    /// Full post-transition states, kept only when requested.
    pub full_states: Option<Vec<AugmentedState>>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepts.is_empty() {
            return 0.0;
        }
        self.accepts.iter().filter(|&&a| a).count() as f64 / self.accepts.len() as f64
    }
}

/// Options for [`run_chains`].
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub n_steps: usize,
    pub seed: u64,
    /// Record full (x, v, d) states in addition to positions.
    pub record_full_states: bool,
}

/// Simulate one chain per initial position. Chains are independent and run
/// in parallel; chain k consumes stream k of `seed`, so results do not
/// depend on the worker count.
pub fn run_chains(
    init_positions: &[Vec<f64>],
    params: &NetParams,
    masks: &MaskSchedule,
    energy: &EnergyModel,
    cfg: &IntegratorConfig,
    opts: &RunOptions,
) -> Result<Vec<ChainTrace>, SamplerError> {
    if opts.n_steps == 0 {
        return Err(SamplerError::EmptyRun);
    }
    for x0 in init_positions {
        if x0.len() != energy.dim() {
            return Err(SamplerError::DimMismatch {
                expected: energy.dim(),
                got: x0.len(),
            });
        }
    }
    init_positions
        .par_iter()
        .enumerate()
        .map(|(chain_idx, x0)| {
            let mut rng = RngStream::new(opts.seed, chain_idx as u64);
            let mut ws = Workspace::new(energy.dim(), params.n_hidden());
            let mut state = AugmentedState::new(x0.clone(), vec![0.0; x0.len()], 1);
            let mut trace = ChainTrace {
                positions: Vec::with_capacity(opts.n_steps),
                accepts: Vec::with_capacity(opts.n_steps),
                accept_probs: Vec::with_capacity(opts.n_steps),
                sq_jumps: Vec::with_capacity(opts.n_steps),
                divergences: 0,
                full_states: opts.record_full_states.then(Vec::new),
            };
            for _ in 0..opts.n_steps {
                resample_aux(&mut state, &mut rng);
                let res = transition(&mut state, params, masks, energy, cfg, &mut ws, &mut rng);
                trace.positions.push(state.x.clone());
                trace.accepts.push(res.accepted);
                trace.accept_probs.push(res.accept_prob);
                trace.sq_jumps.push(res.sq_jump);
                if res.divergent {
                    trace.divergences += 1;
                }
                if let Some(full) = trace.full_states.as_mut() {
                    full.push(state.clone());
                }
            }
            Ok(trace)
        })
        .collect()
}

/// Write one trace as CSV with 17 significant digits per value.
pub fn write_trace_csv<W: Write>(trace: &ChainTrace, out: &mut W) -> std::io::Result<()> {
    let n = trace.positions.first().map(|p| p.len()).unwrap_or(0);
    write!(out, "step,accepted,accept_prob,sq_jump")?;
    for i in 0..n {
        write!(out, ",x_{i}")?;
    }
    writeln!(out)?;
    for (k, pos) in trace.positions.iter().enumerate() {
        write!(
            out,
            "{},{},{:.16e},{:.16e}",
            k,
            if trace.accepts[k] { 1 } else { 0 },
            trace.accept_probs[k],
            trace.sq_jumps[k]
        )?;
        for v in pos {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_setup(n: usize, m: usize, eps: f64) -> (NetParams, MaskSchedule, EnergyModel, IntegratorConfig) {
        let params = NetParams::init(n, 4, m, eps, 0);
        let masks = MaskSchedule::generate(n, m, 1);
        let energy = EnergyModel::std_gaussian(n);
        let cfg = IntegratorConfig::new(eps, m);
        (params, masks, energy, cfg)
    }

    #[test]
    fn resample_touches_only_momentum_and_direction() {
        let mut rng = RngStream::new(7, 0);
        let x = vec![0.25, -1.75, 3.5];
        let mut state = AugmentedState::new(x.clone(), vec![0.0; 3], 1);
        for _ in 0..100 {
            resample_aux(&mut state, &mut rng);
            assert_eq!(state.x, x);
        }
    }

    #[test]
    fn resample_statistics_match_their_distributions() {
        let mut rng = RngStream::new(42, 0);
        let n_draws = 100_000usize;
        let mut state = AugmentedState::new(vec![0.0, 0.0], vec![0.0, 0.0], 1);
        let mut sums = [0.0f64; 2];
        let mut plus = 0usize;
        for _ in 0..n_draws {
            resample_aux(&mut state, &mut rng);
            sums[0] += state.v[0];
            sums[1] += state.v[1];
            if state.d == 1 {
                plus += 1;
            }
        }
        let bound = 4.0 / (n_draws as f64).sqrt();
        assert!((sums[0] / n_draws as f64).abs() < bound);
        assert!((sums[1] / n_draws as f64).abs() < bound);
        let frac = plus as f64 / n_draws as f64;
        assert!((0.494..=0.506).contains(&frac), "frac = {frac}");
    }

    #[test]
    fn small_steps_accept_nearly_always() {
        let (params, masks, energy, cfg) = std_setup(2, 10, 0.05);
        let mut ws = Workspace::new(2, 4);
        let mut rng = RngStream::new(3, 0);
        let mut state = AugmentedState::new(vec![0.1, -0.2], vec![0.0, 0.0], 1);
        let mut accepted = 0usize;
        let total = 10_000usize;
        for _ in 0..total {
            resample_aux(&mut state, &mut rng);
            let res = transition(&mut state, &params, &masks, &energy, &cfg, &mut ws, &mut rng);
            if res.accepted {
                accepted += 1;
            }
            assert!(res.accept_prob >= 0.0 && res.accept_prob <= 1.0);
        }
        let rate = accepted as f64 / total as f64;
        assert!(rate >= 0.95, "acceptance rate {rate}");
    }

    #[test]
    fn rejected_transitions_leave_the_state_bit_identical() {
        // a grotesquely large step size forces rejections
        let (params, masks, energy, cfg) = std_setup(2, 5, 6.0);
        let mut ws = Workspace::new(2, 4);
        let mut rng = RngStream::new(11, 0);
        let mut state = AugmentedState::new(vec![0.3, 0.7], vec![0.0, 0.0], 1);
        let mut saw_rejection = false;
        for _ in 0..200 {
            resample_aux(&mut state, &mut rng);
            let before = state.clone();
            let res = transition(&mut state, &params, &masks, &energy, &cfg, &mut ws, &mut rng);
            if !res.accepted {
                saw_rejection = true;
                assert_eq!(state, before);
            }
        }
        assert!(saw_rejection);
    }

    #[test]
    fn run_chains_contract() {
        let (params, masks, energy, cfg) = std_setup(2, 3, 0.1);
        let opts = RunOptions { n_steps: 1, seed: 5, record_full_states: false };
        let traces =
            run_chains(&[vec![0.0, 0.0]], &params, &masks, &energy, &cfg, &opts).unwrap();
        assert_eq!(traces[0].len(), 1);

        let bad = RunOptions { n_steps: 0, seed: 5, record_full_states: false };
        assert!(matches!(
            run_chains(&[vec![0.0, 0.0]], &params, &masks, &energy, &cfg, &bad),
            Err(SamplerError::EmptyRun)
        ));

        let wrong_dim =
            run_chains(&[vec![0.0; 3]], &params, &masks, &energy, &cfg, &opts);
        assert!(matches!(wrong_dim, Err(SamplerError::DimMismatch { .. })));
    }

    #[test]
    fn same_seed_gives_bit_identical_traces() {
        let (params, masks, energy, cfg) = std_setup(2, 4, 0.2);
        let opts = RunOptions { n_steps: 50, seed: 9, record_full_states: false };
        let inits = vec![vec![0.5, -0.5], vec![1.0, 1.0]];
        let a = run_chains(&inits, &params, &masks, &energy, &cfg, &opts).unwrap();
        let b = run_chains(&inits, &params, &masks, &energy, &cfg, &opts).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.positions, tb.positions);
            assert_eq!(ta.accepts, tb.accepts);
        }
        // chains with different streams decorrelate
        assert_ne!(a[0].positions, a[1].positions);
    }

    #[test]
    fn zero_net_chain_matches_unit_gaussian_moments() {
        let (params, masks, energy, cfg) = std_setup(2, 10, 0.4);
        let opts = RunOptions { n_steps: 100_000, seed: 17, record_full_states: false };
        let traces =
            run_chains(&[vec![0.0, 0.0]], &params, &masks, &energy, &cfg, &opts).unwrap();
        let t = &traces[0];
        for dim in 0..2 {
            let mean: f64 =
                t.positions.iter().map(|p| p[dim]).sum::<f64>() / t.len() as f64;
            let var: f64 = t.positions.iter().map(|p| (p[dim] - mean).powi(2)).sum::<f64>()
                / t.len() as f64;
            assert!((0.97..=1.03).contains(&var), "dim {dim} variance {var}");
        }
    }

    #[test]
    fn csv_has_documented_header_and_17_digits() {
        let trace = ChainTrace {
            positions: vec![vec![0.1, 0.2]],
            accepts: vec![true],
            accept_probs: vec![0.5],
            sq_jumps: vec![0.25],
            divergences: 0,
            full_states: None,
        };
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,accepted,accept_prob,sq_jump,x_0,x_1");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,1,"));
        assert!(row.contains("5.0000000000000000e-1"));
        assert!(row.contains("1.0000000000000001e-1"));
    }
}
