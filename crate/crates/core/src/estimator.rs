//! Maximum-likelihood fitting under the three identifiable settings:
//! known error rate, one error-prone exposure, or two conditionally
//! independent error-prone exposures. Also hosts the moment initializer for
//! the dual setting and case-resampling bootstrap intervals.

use std::borrow::Cow;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{adjusted_odds_ratio, risk_difference};
use crate::error::{Error, Result};
use crate::glm::fit_bernoulli;
use crate::likelihood::{Objective, ParamLayout, TauSpec, UnconstrainedParams};
use crate::links::{logit, LinkFunction};
use crate::model::{check_tau, Dataset, ErrorRate, FullParams};
use crate::optim::{minimize, LbfgsConfig};
use crate::rng::{derive_seed, stream};

/// Log-likelihood gap under which two restarts count as agreeing.
pub const AGREEMENT_TOL: f64 = 1e-4;
/// Free rates closer than this to 0 (or 1) are flagged as boundary fits.
pub const BOUNDARY_TOL: f64 = 1e-4;
/// Rate used by the warm start when it is free and has no better guess.
pub const WARM_START_TAU: f64 = 0.1;
/// Standard deviation of the restart perturbation.
pub const RESTART_SCALE: f64 = 0.5;

const BOOTSTRAP_TAG: u64 = 0xB007;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitMode {
    /// `τ` supplied by the analyst; only `φ` and `θ` are estimated.
    KnownTau { tau: f64 },
    /// `τ` estimated from a single error-prone exposure.
    SingleObs,
    /// `(τ₁, τ₂)` estimated from two conditionally independent exposures.
    DualObs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: FitMode,
    pub link_propensity: LinkFunction,
    pub link_outcome: LinkFunction,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Tolerance on the infinity norm of the per-sample mean gradient.
    pub grad_tol: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(mode: FitMode) -> Self {
        Self {
            mode,
            link_propensity: LinkFunction::Logit,
            link_outcome: LinkFunction::Logit,
            restarts: 5,
            max_iterations: 500,
            grad_tol: 1e-6,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_links(mut self, propensity: LinkFunction, outcome: LinkFunction) -> Self {
        self.link_propensity = propensity;
        self.link_outcome = outcome;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let FitMode::KnownTau { tau } = self.mode {
            check_tau(tau)?;
        }
        if self.restarts == 0 {
            return Err(Error::Input("restarts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Input("grad_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self, d: usize) -> ParamLayout {
        let tau = match self.mode {
            FitMode::KnownTau { tau } => TauSpec::Fixed(ErrorRate::Single { tau }),
            FitMode::SingleObs => TauSpec::Free,
            FitMode::DualObs => TauSpec::FreeDual,
        };
        ParamLayout {
            d,
            tau,
            link_propensity: self.link_propensity,
            link_outcome: self.link_outcome,
        }
    }

    fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            max_iterations: self.max_iterations,
            grad_tol: self.grad_tol,
            ..LbfgsConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FullParams,
    /// Total log-likelihood over all samples at the reported parameters.
    pub log_likelihood_at_opt: f64,
    pub converged: bool,
    /// `‖∇ L / N‖∞` at the reported parameters.
    pub gradient_norm: f64,
    pub n_restarts_agreeing: usize,
    pub boundary_suspect: bool,
    pub restarts: Vec<RestartOutcome>,
    pub warnings: Vec<String>,
}

/// Drops or requires the second exposure column according to the mode.
fn prepare<'a>(data: &'a Dataset, config: &FitConfig) -> Result<Cow<'a, Dataset>> {
    match config.mode {
        FitMode::DualObs if !data.has_second_obs() => Err(Error::ModeMismatch(
            "dual-observation mode requires the a_obs2 column".into(),
        )),
        FitMode::DualObs => Ok(Cow::Borrowed(data)),
        _ if data.has_second_obs() => Ok(Cow::Owned(data.single_obs())),
        _ => Ok(Cow::Borrowed(data)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub tau1: f64,
    pub tau2: f64,
    pub warnings: Vec<String>,
}

/// Cross-tabulation estimate of the two underreporting rates: `τ₁` is the
/// share of `ã₁ = 0` among rows with `ã₂ = 1`, and symmetrically for `τ₂`.
pub fn moment_init(data: &Dataset) -> Result<MomentEstimate> {
    let second = data.a_obs2().ok_or_else(|| {
        Error::ModeMismatch("moment initializer needs the a_obs2 column".into())
    })?;
    let first = data.a_obs();
    let mut warnings = Vec::new();
    let mut rate = |missed: &[bool], reference: &[bool], label: &str| -> f64 {
        let denom = reference.iter().filter(|&&r| r).count();
        if denom == 0 {
            let msg = format!(
                "no rows with the other exposure observed; {label} falls back to {WARM_START_TAU}"
            );
            log::warn!("{msg}");
            warnings.push(msg);
            return WARM_START_TAU;
        }
        let misses = missed
            .iter()
            .zip(reference)
            .filter(|(&m, &r)| r && !m)
            .count();
        (misses as f64 / denom as f64).clamp(0.0, 1.0 - 1e-6)
    };
    let tau1 = rate(first, second, "tau1");
    let tau2 = rate(second, first, "tau2");
    Ok(MomentEstimate {
        tau1,
        tau2,
        warnings,
    })
}

/// Deterministic starting point: `φ` and `θ` from direct Bernoulli fits that
/// treat the (first) observed exposure as the truth.
fn warm_start(data: &Dataset, config: &FitConfig) -> Result<(UnconstrainedParams, Vec<String>)> {
    let layout = config.layout(data.d());
    let n = data.n();
    let d = data.d();
    let lbfgs = config.lbfgs();
    let mut warnings = Vec::new();

    let propensity = fit_bernoulli(
        data.covariates(),
        d,
        data.a_obs(),
        config.link_propensity,
        &lbfgs,
    );
    let mut design = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        design.extend_from_slice(data.row(i));
        design.push(if data.a_obs()[i] { 1.0 } else { 0.0 });
    }
    let outcome = fit_bernoulli(&design, d + 1, data.y(), config.link_outcome, &lbfgs);

    let mut values = Vec::with_capacity(layout.len());
    match config.mode {
        FitMode::KnownTau { .. } => {}
        FitMode::SingleObs => values.push(logit(WARM_START_TAU)),
        FitMode::DualObs => {
            let m = moment_init(data)?;
            warnings.extend(m.warnings);
            let clamp = |t: f64| t.clamp(1e-4, 1.0 - 1e-4);
            values.push(logit(clamp(m.tau1)));
            values.push(logit(clamp(m.tau2)));
        }
    }
    values.push(propensity.intercept);
    values.extend_from_slice(&propensity.weights);
    values.push(outcome.intercept);
    values.extend_from_slice(&outcome.weights[..d]);
    values.push(outcome.weights[d]);
    Ok((UnconstrainedParams::new(layout, values)?, warnings))
}

fn perturb<R: Rng + ?Sized>(start: &UnconstrainedParams, rng: &mut R) -> UnconstrainedParams {
    let values = start
        .values
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + RESTART_SCALE * z
        })
        .collect();
    UnconstrainedParams {
        layout: start.layout,
        values,
    }
}

/// Starting point for restart `restart_index`. Restart 0 is the warm start
/// and ignores `rng`; later restarts add `N(0, 0.5²)` noise to it.
pub fn initialize<R: Rng + ?Sized>(
    data: &Dataset,
    config: &FitConfig,
    restart_index: usize,
    rng: &mut R,
) -> Result<UnconstrainedParams> {
    config.validate()?;
    let data = prepare(data, config)?;
    let (start, _) = warm_start(&data, config)?;
    Ok(if restart_index == 0 {
        start
    } else {
        perturb(&start, rng)
    })
}

/// Maximizes the marginal likelihood from `config.restarts` starting points
/// and reports the best one.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let data = prepare(data, config)?;
    let layout = config.layout(data.d());
    let objective = Objective::new(layout, &data)?;
    let (start, warnings) = warm_start(&data, config)?;
    let lbfgs = config.lbfgs();
    let inv_n = 1.0 / data.n() as f64;

    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut outcomes = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let init = if r == 0 {
            start.clone()
        } else {
            perturb(&start, &mut stream(config.seed, r as u64))
        };
        let neg_mean = |v: &[f64], g: &mut [f64]| -> f64 {
            let ll = objective.value_and_gradient(v, g);
            g.iter_mut().for_each(|gi| *gi *= -inv_n);
            -ll * inv_n
        };
        let m = minimize(neg_mean, init.values, &lbfgs);
        let ll = objective.value(&m.x);
        let outcome = RestartOutcome {
            log_likelihood: ll,
            converged: m.converged(),
            iterations: m.iterations,
            gradient_norm: crate::optim::inf_norm(&m.gradient),
        };
        let better = match &best {
            None => ll.is_finite(),
            Some((b, _)) => ll > outcomes_ll(&outcomes, *b),
        };
        outcomes.push(outcome);
        if better {
            best = Some((r, m.x));
        }
    }

    let (best_idx, best_x) = best.ok_or_else(|| {
        Error::Domain("no restart produced a finite log-likelihood".into())
    })?;
    let best_out = &outcomes[best_idx];
    let n_agree = outcomes
        .iter()
        .filter(|o| (o.log_likelihood - best_out.log_likelihood).abs() <= AGREEMENT_TOL)
        .count();
    let u = UnconstrainedParams::new(layout, best_x)?;
    let params = u.to_constrained();
    let boundary_suspect = layout.tau.n_free() > 0
        && params
            .error
            .components()
            .iter()
            .any(|&t| !(BOUNDARY_TOL..=1.0 - BOUNDARY_TOL).contains(&t));

    Ok(FitResult {
        params,
        log_likelihood_at_opt: best_out.log_likelihood,
        converged: best_out.converged,
        gradient_norm: best_out.gradient_norm,
        n_restarts_agreeing: n_agree,
        boundary_suspect,
        restarts: outcomes,
        warnings,
    })
}

fn outcomes_ll(outcomes: &[RestartOutcome], idx: usize) -> f64 {
    outcomes[idx].log_likelihood
}

/// Quantity reported with a bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Estimand {
    Tau,
    Tau1,
    Tau2,
    PhiIntercept,
    PhiWeight(usize),
    ThetaIntercept,
    ThetaWeight(usize),
    ThetaExposure,
    RiskDifference,
    OddsRatio,
}

impl Estimand {
    /// Human-readable name, using covariate names where available.
    pub fn label(&self, covariates: &[String]) -> String {
        let cov = |j: usize| {
            covariates
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("x{}", j + 1))
        };
        match *self {
            Self::Tau => "tau".into(),
            Self::Tau1 => "tau1".into(),
            Self::Tau2 => "tau2".into(),
            Self::PhiIntercept => "phi_intercept".into(),
            Self::PhiWeight(j) => format!("phi_{}", cov(j)),
            Self::ThetaIntercept => "theta_intercept".into(),
            Self::ThetaWeight(j) => format!("theta_{}", cov(j)),
            Self::ThetaExposure => "theta_a".into(),
            Self::RiskDifference => "risk_difference".into(),
            Self::OddsRatio => "odds_ratio".into(),
        }
    }
}

/// Every estimand with its plug-in value for `params` on `data`.
pub fn estimands(params: &FullParams, data: &Dataset) -> Result<Vec<(Estimand, f64)>> {
    let mut out = Vec::new();
    match params.error {
        ErrorRate::Single { tau } => out.push((Estimand::Tau, tau)),
        ErrorRate::Dual { tau1, tau2 } => {
            out.push((Estimand::Tau1, tau1));
            out.push((Estimand::Tau2, tau2));
        }
    }
    out.push((Estimand::PhiIntercept, params.propensity.intercept));
    for (j, &w) in params.propensity.weights.iter().enumerate() {
        out.push((Estimand::PhiWeight(j), w));
    }
    out.push((Estimand::ThetaIntercept, params.outcome.intercept));
    for (j, &w) in params.outcome.weights.iter().enumerate() {
        out.push((Estimand::ThetaWeight(j), w));
    }
    out.push((Estimand::ThetaExposure, params.outcome.exposure_coef));
    out.push((Estimand::RiskDifference, risk_difference(&params.outcome, data)?));
    if let Ok(or) = adjusted_odds_ratio(&params.outcome) {
        out.push((Estimand::OddsRatio, or));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub ci_level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 200,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimand: Estimand,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: FitResult,
    pub replicates: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    pub ci_level: f64,
    pub intervals: Vec<Interval>,
}

impl BootstrapResult {
    pub fn interval(&self, estimand: Estimand) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.estimand == estimand)
    }
}

/// Symmetric nearest-rank percentile interval: with `k = ⌈n (1 - level) / 2⌉`
/// the endpoints are order statistics `k` and `n + 1 - k` (1-based).
pub fn percentile_interval(values: &[f64], ci_level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Input("percentile interval of an empty sample".into()));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::Domain(format!("ci level {ci_level} not in (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let tail = 0.5 * (1.0 - ci_level) * n as f64;
    let k = ((tail - 1e-9).ceil() as usize).clamp(1, n.div_ceil(2));
    Ok((sorted[k - 1], sorted[n - k]))
}

/// Case-resampling bootstrap of every estimand. Replicates refit with at
/// most two restarts; non-converged replicates are dropped and counted.
pub fn bootstrap(
    data: &Dataset,
    config: &FitConfig,
    replicates: usize,
    ci_level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if replicates < 10 {
        return Err(Error::Input(format!(
            "bootstrap needs at least 10 replicates, got {replicates}"
        )));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::Domain(format!("ci level {ci_level} not in (0, 1)")));
    }
    let point = fit(data, config)?;
    let point_values = estimands(&point.params, data)?;

    let n = data.n();
    let rep_config = FitConfig {
        restarts: config.restarts.min(2),
        ..*config
    };
    let draws: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| -> Result<Option<Vec<f64>>> {
            let mut rng = stream(derive_seed(seed, BOOTSTRAP_TAG, 0), b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = data.select_rows(&idx)?;
            let cfg = FitConfig {
                seed: derive_seed(seed, BOOTSTRAP_TAG, b as u64 + 1),
                ..rep_config
            };
            let res = fit(&sample, &cfg)?;
            if !res.converged {
                return Ok(None);
            }
            let vals = estimands(&res.params, &sample)?;
            Ok(Some(vals.into_iter().map(|(_, v)| v).collect()))
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let failed = replicates - used.len();
    if 2 * failed > replicates {
        return Err(Error::Bootstrap(format!(
            "{failed} of {replicates} replicates failed to converge; intervals unreliable"
        )));
    }
    let mut intervals = Vec::with_capacity(point_values.len());
    for (k, (estimand, estimate)) in point_values.iter().enumerate() {
        let column: Vec<f64> = used.iter().map(|v| v[k]).collect();
        let (lower, upper) = percentile_interval(&column, ci_level)?;
        intervals.push(Interval {
            estimand: *estimand,
            estimate: *estimate,
            lower,
            upper,
        });
    }
    Ok(BootstrapResult {
        point,
        replicates,
        replicates_used: used.len(),
        replicates_failed: failed,
        ci_level,
        intervals,
    })
}
