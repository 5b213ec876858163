//! Estimation of a binary-outcome model when the binary exposure is only
//! seen through an underreported proxy.
//!
//! The observed exposure `ã` relates to the true exposure `a` through
//! `P(ã = 1 | a = 1) = 1 - τ` and `P(ã = 1 | a = 0) = 0`. The marginal
//! likelihood sums the latent exposure out of
//! `p(y, ã | x) = Σ_a P(ã | a) p_φ(a | x) p_θ(y | a, x)`
//! and is maximized with the rate known, estimated from one report, or
//! estimated from two conditionally independent reports.

pub mod cli;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod glm;
pub mod likelihood;
pub mod links;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synthlab;

pub use effects::{adjusted_odds_ratio, risk_difference, sensitivity_sweep, SensitivityBand};
pub use error::{Error, Result};
pub use estimator::{
    bootstrap, fit, initialize, moment_init, BootstrapOptions, BootstrapResult, Estimand,
    FitConfig, FitMode, FitResult,
};
pub use likelihood::{fd_gradient_oracle, gradient, log_likelihood, ParamLayout, TauSpec, UnconstrainedParams};
pub use links::LinkFunction;
pub use model::{error_prob, Dataset, ErrorRate, FullParams, OutcomeParams, PropensityParams};
pub use synthlab::{
    generate, mutual_information, run_experiment, ExperimentAxis, ExperimentReport, MiTarget,
    SynthConfig, Synthetic,
};
