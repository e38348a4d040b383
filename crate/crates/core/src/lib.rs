//! Trainable Hamiltonian Monte Carlo samplers.
//!
//! A generalized leapfrog integrator rescales and translates each of its
//! shear sub-updates with small neural networks, keeping the map exactly
//! invertible with a cheap log-Jacobian so Metropolis-Hastings-Green
//! correction still applies. The networks are trained to maximize expected
//! squared jumped distance; with zero networks the sampler is plain HMC.
//!
//! Modules:
//! - [`energy`]: analytic targets with exact gradients and Hessian-vector products
//! - [`nets`]: the scale/rescale/translation networks and their flat parameters
//! - [`tape`]: reverse-mode differentiation over a closed vector-primitive set
//! - [`integrator`]: the augmented leapfrog, its inverse, and acceptance
//! - [`sampler`]: auxiliary resampling, transitions, batched chains
//! - [`objective`]: the differentiable training loss
//! - [`training`]: the training loop, Adam, annealing, baseline tuning
//! - [`diagnostics`]: autocorrelation, effective sample size, self checks
//! - [`checkpoint`]: JSON persistence of parameters and masks

pub mod checkpoint;
pub mod diagnostics;
pub mod energy;
pub mod integrator;
pub mod nets;
pub mod objective;
pub mod sampler;
pub mod tape;
pub mod training;

pub use checkpoint::Checkpoint;
pub use energy::{build_energy, EnergyKind, EnergyModel, EnergySpec};
pub use integrator::{
    accept_prob, apply_operator, flip, AugmentedState, IntegratorConfig, MaskSchedule,
    ProposalResult,
};
pub use nets::{encode_time, NetParams, Stack};
pub use sampler::{resample_aux, run_chains, transition, ChainTrace, RngStream, RunOptions};
pub use tape::{Slot, Tape};
pub use training::{
    adam_step, anneal_temperature, loss_term, train, tune_hmc, AdamParams, OptimizerState,
    TrainConfig, TrainError, TrainReport, TuneOutcome,
};
