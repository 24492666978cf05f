//! Conditional noise-contrastive estimation (CNCE) of unnormalised models.
//!
//! This crate is the allocation-only core: model definitions, conditional and
//! marginal noise, the CNCE / NCE / score-matching / MLE objectives, a
//! deterministic full-batch optimizer and the error metrics used to score
//! estimates. It has no IO and pulls all randomness from explicit seeds.
//!
//! The companion `cnce` crate adds the experiment harness, file formats and
//! the command-line front end.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod estimators;
pub mod limit;
pub mod math;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optimize;
pub mod sample;
pub mod seed;

pub use error::{Error, Result};
pub use estimators::{
    bernoulli_population_loss, bernoulli_population_loss_report, cnce_g, cnce_loss, mle_fit,
    nce_loss, score_matching_loss, LossReport, MleMethod, MleResult,
};
pub use metrics::{estimation_error, quantile};
pub use model::{
    generate_true_params, grad_theta_log_phi, grad_u_log_phi, laplacian_u_log_phi, log_phi,
    sample_data, ModelKind, ModelSpec, ParamRecord, ParamVector, PreparedModel,
};
pub use noise::{
    fit_marginal, log_density_marginal, log_ratio, sample_conditional, sample_marginal,
    ConditionalKernel, ConditionalNoise, KernelConfig, KernelKind, MarginalKernel, NoisePairing,
};
pub use optimize::{
    adapt_epsilon, minimize, EpsilonChoice, EpsilonSchedule, EstimationRun, Objective,
    OptimizerConfig, RunStatus, StepRule,
};
pub use sample::SampleMatrix;
