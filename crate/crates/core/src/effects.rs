//! Effect estimands from a fitted outcome model and the fixed-rate
//! sensitivity sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::{bootstrap, fit, BootstrapOptions, Estimand, FitConfig, FitMode};
use crate::links::LinkFunction;
use crate::model::{check_tau, order_free_sum, Dataset, OutcomeParams};

/// Average over the observed rows of `p(Y=1 | A=1, x) - p(Y=1 | A=0, x)`,
/// summed in an order that does not depend on the row order.
pub fn risk_difference(outcome: &OutcomeParams, data: &Dataset) -> Result<f64> {
    check_dim(outcome.weights.len(), data.d(), "outcome weights")?;
    let contrasts = (0..data.n())
        .map(|i| {
            let x = data.row(i);
            Ok(outcome.mean(true, x)? - outcome.mean(false, x)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(order_free_sum(contrasts) / data.n() as f64)
}

/// Covariate-adjusted odds ratio `exp(θ_A)`; only defined for a logit outcome.
pub fn adjusted_odds_ratio(outcome: &OutcomeParams) -> Result<f64> {
    if outcome.link != LinkFunction::Logit {
        return Err(Error::Unsupported(format!(
            "odds ratio needs a logit outcome link, got {}",
            outcome.link
        )));
    }
    Ok(outcome.exposure_coef.exp())
}

/// Risk-difference estimates across a grid of assumed error rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBand {
    pub tau_grid: Vec<f64>,
    pub rd_estimates: Vec<f64>,
    pub ci_lower: Option<Vec<Option<f64>>>,
    pub ci_upper: Option<Vec<Option<f64>>>,
    pub converged: Vec<bool>,
    /// One entry per grid point that needs attention; empty when all is well.
    pub warnings: Vec<String>,
}

impl SensitivityBand {
    pub fn len(&self) -> usize {
        self.tau_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_grid.is_empty()
    }
}

struct PointOutcome {
    rd: f64,
    ci: Option<(f64, f64)>,
    converged: bool,
    warning: Option<String>,
}

/// Fits the known-rate model at each grid value and evaluates the risk
/// difference. Every point reuses `base.seed`, so a grid point reproduces the
/// corresponding standalone fit exactly.
pub fn sensitivity_sweep(
    data: &Dataset,
    base: &FitConfig,
    tau_grid: &[f64],
    bootstrap_opts: Option<BootstrapOptions>,
) -> Result<SensitivityBand> {
    if tau_grid.is_empty() {
        return Err(Error::Input("tau grid is empty".into()));
    }
    for &tau in tau_grid {
        check_tau(tau)?;
    }
    if tau_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("tau grid must be strictly increasing".into()));
    }

    let points: Vec<PointOutcome> = tau_grid
        .par_iter()
        .map(|&tau| -> Result<PointOutcome> {
            let cfg = FitConfig {
                mode: FitMode::KnownTau { tau },
                ..*base
            };
            let res = fit(data, &cfg)?;
            let rd = risk_difference(&res.params.outcome, data)?;
            let mut warning =
                (!res.converged).then(|| format!("fit at tau = {tau} did not converge"));
            let ci = match bootstrap_opts {
                None => None,
                Some(opts) => {
                    match bootstrap(data, &cfg, opts.replicates, opts.ci_level, cfg.seed) {
                        Ok(b) => b
                            .interval(Estimand::RiskDifference)
                            .map(|i| (i.lower, i.upper)),
                        Err(Error::Bootstrap(msg)) => {
                            warning = Some(format!("bootstrap at tau = {tau}: {msg}"));
                            None
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            Ok(PointOutcome {
                rd,
                ci,
                converged: res.converged,
                warning,
            })
        })
        .collect::<Result<_>>()?;

    let with_ci = bootstrap_opts.is_some();
    Ok(SensitivityBand {
        tau_grid: tau_grid.to_vec(),
        rd_estimates: points.iter().map(|p| p.rd).collect(),
        ci_lower: with_ci.then(|| points.iter().map(|p| p.ci.map(|c| c.0)).collect()),
        ci_upper: with_ci.then(|| points.iter().map(|p| p.ci.map(|c| c.1)).collect()),
        converged: points.iter().map(|p| p.converged).collect(),
        warnings: points.iter().filter_map(|p| p.warning.clone()).collect(),
    })
}
