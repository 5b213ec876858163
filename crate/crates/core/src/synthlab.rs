//! Synthetic data with known ground truth, the Monte-Carlo comparison of
//! adjusted and unadjusted risk-difference estimates, and a plug-in
//! mutual-information diagnostic.
//!
//! Generating process for each row:
//!
//! ```text
//! x ~ N(0, I_d)
//! A | x ~ Bern(α · expit(φ₀ + c · φ·x))
//! Z ~ Bern(1 - τ),  ã = Z · A
//! Y | A, x ~ Bern(expit(θ₀ + θ·x + θ_A · A))
//! ```
//!
//! `φ₀, φ, θ₀, θ` are drawn standard normal once per dataset, `c` is the
//! propensity scale and `α` the saturation (1 for the identifiable model).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::risk_difference;
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig, FitMode};
use crate::glm::fit_bernoulli;
use crate::links::{expit, LinkFunction};
use crate::model::{check_tau, Dataset, ErrorRate, FullParams, OutcomeParams, PropensityParams};
use crate::optim::LbfgsConfig;
use crate::rng::{derive_seed, stream};

const DATA_TAG: u64 = 0xDA7A;
const FIT_TAG: u64 = 0xF17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    /// Rate for a second, conditionally independent report; `None` for one.
    pub tau2: Option<f64>,
    pub theta_a: f64,
    /// Multiplies the propensity weights; the intercept is left alone.
    pub phi_scale: f64,
    /// Upper bound `α` of the propensity. Values below 1 break identifiability.
    pub saturation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 5,
            tau: 0.25,
            tau2: None,
            theta_a: 1.0,
            phi_scale: 1.0,
            saturation: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("n must be at least 1".into()));
        }
        check_tau(self.tau)?;
        if let Some(t) = self.tau2 {
            check_tau(t)?;
        }
        if !self.theta_a.is_finite() {
            return Err(Error::Domain("theta_a must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.phi_scale) {
            return Err(Error::Domain(format!(
                "phi_scale {} not in [0, 1]",
                self.phi_scale
            )));
        }
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(Error::Domain(format!(
                "saturation {} not in (0, 1]",
                self.saturation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub data: Dataset,
    /// Latent true exposure, never seen by the estimators.
    pub a_true: Vec<bool>,
    /// Generating parameters. With `saturation < 1` the propensity is not a
    /// member of the logit family and the stored propensity omits `α`.
    pub truth: FullParams,
    /// Risk difference under the true outcome model on the generated rows.
    pub true_rd: f64,
}

fn normals<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn generate(config: &SynthConfig) -> Result<Synthetic> {
    config.validate()?;
    let SynthConfig { n, d, tau, tau2, .. } = *config;
    let mut rng = stream(config.seed, 0);

    let phi0: f64 = rng.sample(StandardNormal);
    let phi: Vec<f64> = normals(&mut rng, d)
        .into_iter()
        .map(|w| w * config.phi_scale)
        .collect();
    let theta0: f64 = rng.sample(StandardNormal);
    let theta = normals(&mut rng, d);

    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut a_true = Vec::with_capacity(n);
    let mut a_obs = Vec::with_capacity(n);
    let mut a_obs2 = tau2.map(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let row = normals(&mut rng, d);
        let lin_a = phi0 + row.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        let a = rng.random::<f64>() < config.saturation * expit(lin_a);
        a_obs.push(a && rng.random::<f64>() >= tau);
        if let (Some(t2), Some(col)) = (tau2, a_obs2.as_mut()) {
            col.push(a && rng.random::<f64>() >= t2);
        }
        let lin_y = theta0
            + row.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()
            + if a { config.theta_a } else { 0.0 };
        y.push(rng.random::<f64>() < expit(lin_y));
        a_true.push(a);
        x.extend(row);
    }

    let data = Dataset::new(d, x, y, a_obs, a_obs2)?;
    let error = match tau2 {
        None => ErrorRate::single(tau)?,
        Some(t2) => ErrorRate::dual(tau, t2)?,
    };
    let truth = FullParams::new(
        error,
        PropensityParams {
            intercept: phi0,
            weights: phi,
            link: LinkFunction::Logit,
        },
        OutcomeParams {
            intercept: theta0,
            weights: theta,
            exposure_coef: config.theta_a,
            link: LinkFunction::Logit,
        },
    )?;
    let true_rd = risk_difference(&truth.outcome, &data)?;
    Ok(Synthetic {
        data,
        a_true,
        truth,
        true_rd,
    })
}

/// Which observed exposure the mutual-information diagnostic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiTarget {
    ObsExposure,
    SecondObsExposure,
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Plug-in estimate of `I(Ã; X)` in nats from a logistic regression of the
/// reported exposure on the covariates.
pub fn mutual_information(data: &Dataset, target: MiTarget) -> Result<f64> {
    if data.n() < 50 {
        return Err(Error::Input(format!(
            "mutual information needs at least 50 rows, got {}",
            data.n()
        )));
    }
    let response = match target {
        MiTarget::ObsExposure => data.a_obs(),
        MiTarget::SecondObsExposure => data
            .a_obs2()
            .ok_or_else(|| Error::Input("missing column a_obs2".into()))?,
    };
    let ones = response.iter().filter(|&&r| r).count();
    if ones == 0 || ones == response.len() {
        log::warn!("reported exposure is constant; mutual information set to 0");
        return Ok(0.0);
    }
    let model = fit_bernoulli(
        data.covariates(),
        data.d(),
        response,
        LinkFunction::Logit,
        &LbfgsConfig::default(),
    );
    let n = data.n() as f64;
    let fitted: Vec<f64> = (0..data.n())
        .map(|i| model.mean(LinkFunction::Logit, data.row(i)))
        .collect();
    let p_bar = fitted.iter().sum::<f64>() / n;
    let conditional = fitted.iter().map(|&p| binary_entropy(p)).sum::<f64>() / n;
    Ok((binary_entropy(p_bar) - conditional).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentAxis {
    /// Grid values are true underreporting rates.
    TauSweep,
    /// Grid values are sample sizes.
    SizeSweep,
    /// Grid values are propensity scales.
    MiSweep,
}

impl ExperimentAxis {
    fn apply(self, base: &SynthConfig, value: f64) -> Result<SynthConfig> {
        let mut cfg = *base;
        match self {
            Self::TauSweep => cfg.tau = value,
            Self::SizeSweep => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Input(format!("sample size {value} is not a positive integer")));
                }
                cfg.n = value as usize;
            }
            Self::MiSweep => cfg.phi_scale = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub axis: ExperimentAxis,
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub base: SynthConfig,
    pub mse_adjusted: Vec<f64>,
    pub mse_unadjusted: Vec<f64>,
    /// Replicates per grid point where either fit failed; such pairs are
    /// excluded from both MSEs.
    pub n_failed: Vec<usize>,
    /// Grid points where more than a fifth of the replicates failed.
    pub flagged: Vec<bool>,
    /// `[grid point][replicate]` tables.
    pub true_rd_per_replicate: Vec<Vec<f64>>,
    pub rd_adjusted: Vec<Vec<Option<f64>>>,
    pub rd_unadjusted: Vec<Vec<Option<f64>>>,
    pub tau_hat: Vec<Vec<Option<f64>>>,
    /// Mean measured `I(Ã; X)` per grid point; filled for the propensity-scale axis.
    pub mean_mutual_information: Option<Vec<f64>>,
}

struct ReplicateOutcome {
    true_rd: f64,
    adjusted: Option<(f64, f64)>,
    unadjusted: Option<f64>,
    mi: Option<f64>,
}

fn run_replicate(
    axis: ExperimentAxis,
    synth: &SynthConfig,
    fit_config: &FitConfig,
    fit_seed: u64,
) -> Result<ReplicateOutcome> {
    let sample = generate(synth)?;
    let data = &sample.data;
    let adjusted_cfg = FitConfig {
        mode: FitMode::SingleObs,
        seed: fit_seed,
        ..*fit_config
    };
    let unadjusted_cfg = FitConfig {
        mode: FitMode::KnownTau { tau: 0.0 },
        seed: fit_seed,
        ..*fit_config
    };
    let estimate = |cfg: &FitConfig| -> Option<(f64, FullParams)> {
        let res = fit(data, cfg).ok().filter(|r| r.converged)?;
        let rd = risk_difference(&res.params.outcome, data).ok()?;
        Some((rd, res.params))
    };
    let adjusted = estimate(&adjusted_cfg).map(|(rd, p)| (rd, p.error.components()[0]));
    let unadjusted = estimate(&unadjusted_cfg).map(|(rd, _)| rd);
    let mi = match axis {
        ExperimentAxis::MiSweep => Some(mutual_information(data, MiTarget::ObsExposure)?),
        _ => None,
    };
    Ok(ReplicateOutcome {
        true_rd: sample.true_rd,
        adjusted,
        unadjusted,
        mi,
    })
}

/// Monte-Carlo comparison of the adjusted (estimated rate) and unadjusted
/// (rate fixed at 0) risk-difference estimators along one axis. Replicate
/// `r` uses the same data seed at every grid point, and both estimators see
/// the same dataset.
pub fn run_experiment(
    axis: ExperimentAxis,
    grid: &[f64],
    base: &SynthConfig,
    replicates: usize,
    fit_config: &FitConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    if grid.is_empty() {
        return Err(Error::Input("experiment grid is empty".into()));
    }
    if replicates < 2 {
        return Err(Error::Input(format!(
            "experiments need at least 2 replicates, got {replicates}"
        )));
    }
    fit_config.validate()?;
    let configs: Vec<SynthConfig> = grid
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..replicates).map(move |r| (g, r)))
        .collect();
    let outcomes: Vec<ReplicateOutcome> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let synth = SynthConfig {
                seed: derive_seed(seed, DATA_TAG, r as u64),
                ..configs[g]
            };
            run_replicate(axis, &synth, fit_config, derive_seed(seed, FIT_TAG, r as u64))
        })
        .collect::<Result<_>>()?;

    let mut report = ExperimentReport {
        axis,
        grid: grid.to_vec(),
        replicates,
        seed,
        base: *base,
        mse_adjusted: Vec::new(),
        mse_unadjusted: Vec::new(),
        n_failed: Vec::new(),
        flagged: Vec::new(),
        true_rd_per_replicate: Vec::new(),
        rd_adjusted: Vec::new(),
        rd_unadjusted: Vec::new(),
        tau_hat: Vec::new(),
        mean_mutual_information: (axis == ExperimentAxis::MiSweep).then(Vec::new),
    };
    for point in outcomes.chunks(replicates) {
        let mut sq_adj = 0.0;
        let mut sq_unadj = 0.0;
        let mut used = 0usize;
        for o in point {
            if let (Some((adj, _)), Some(unadj)) = (o.adjusted, o.unadjusted) {
                sq_adj += (adj - o.true_rd).powi(2);
                sq_unadj += (unadj - o.true_rd).powi(2);
                used += 1;
            }
        }
        let failed = replicates - used;
        report.mse_adjusted.push(sq_adj / used as f64);
        report.mse_unadjusted.push(sq_unadj / used as f64);
        report.n_failed.push(failed);
        report.flagged.push(5 * failed > replicates);
        report
            .true_rd_per_replicate
            .push(point.iter().map(|o| o.true_rd).collect());
        report
            .rd_adjusted
            .push(point.iter().map(|o| o.adjusted.map(|a| a.0)).collect());
        report
            .rd_unadjusted
            .push(point.iter().map(|o| o.unadjusted).collect());
        report
            .tau_hat
            .push(point.iter().map(|o| o.adjusted.map(|a| a.1)).collect());
        if let Some(mi) = report.mean_mutual_information.as_mut() {
            mi.push(point.iter().filter_map(|o| o.mi).sum::<f64>() / replicates as f64);
        }
    }
    Ok(report)
}
