//! Marginal log-likelihood of the observed `(y, ã)` given `x`, with the
//! latent true exposure summed out, and its analytic gradient.
//!
//! Parameters are optimized in an unconstrained space: each free `τ` is
//! stored as `logit(τ)`, followed by the propensity block
//! `[intercept, weights..]` and the outcome block
//! `[intercept, weights.., exposure_coef]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::links::{expit, expit_slope, logit, LinkFunction};
use crate::model::{order_free_sum, 
    check_tau, dot, error_entry, Dataset, ErrorRate, FullParams, OutcomeParams, PropensityParams,
};

/// Largest `τ` reachable from the logit scale; keeps `1 - τ` positive.
const TAU_CEIL: f64 = 1.0 - 1e-12;

/// How the error rate enters the free parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSpec {
    /// Held fixed; contributes no free parameter.
    Fixed(ErrorRate),
    /// One free rate, single observation.
    Free,
    /// Two free rates, dual observation.
    FreeDual,
}

impl TauSpec {
    pub fn n_free(&self) -> usize {
        match self {
            Self::Fixed(_) => 0,
            Self::Free => 1,
            Self::FreeDual => 2,
        }
    }

    pub fn is_dual(&self) -> bool {
        match self {
            Self::Fixed(rate) => rate.is_dual(),
            Self::Free => false,
            Self::FreeDual => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub d: usize,
    pub tau: TauSpec,
    pub link_propensity: LinkFunction,
    pub link_outcome: LinkFunction,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.tau.n_free() + (self.d + 1) + (self.d + 2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi_offset(&self) -> usize {
        self.tau.n_free()
    }

    pub fn theta_offset(&self) -> usize {
        self.tau.n_free() + self.d + 1
    }

    /// Index of the outcome exposure coefficient in the free vector.
    pub fn exposure_index(&self) -> usize {
        self.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        check_dim(layout.len(), values.len(), "free parameter count")?;
        Ok(Self { layout, values })
    }

    /// Maps constrained parameters into the free vector.
    ///
    /// With `tau` free the rates must lie strictly inside `(0, 1)`. With
    /// `TauSpec::Fixed` the stored rate is kept and the one in `params` ignored.
    pub fn from_constrained(params: &FullParams, tau: TauSpec) -> Result<Self> {
        params.validate()?;
        let layout = ParamLayout {
            d: params.d(),
            tau,
            link_propensity: params.propensity.link,
            link_outcome: params.outcome.link,
        };
        let mut values = Vec::with_capacity(layout.len());
        match (tau, params.error) {
            (TauSpec::Fixed(rate), _) => {
                for t in rate.components() {
                    check_tau(t)?;
                }
            }
            (TauSpec::Free, ErrorRate::Single { tau }) => values.push(free_tau(tau)?),
            (TauSpec::FreeDual, ErrorRate::Dual { tau1, tau2 }) => {
                values.push(free_tau(tau1)?);
                values.push(free_tau(tau2)?);
            }
            _ => {
                return Err(Error::ModeMismatch(
                    "error rate shape does not match the free-parameter layout".into(),
                ))
            }
        }
        values.push(params.propensity.intercept);
        values.extend_from_slice(&params.propensity.weights);
        values.push(params.outcome.intercept);
        values.extend_from_slice(&params.outcome.weights);
        values.push(params.outcome.exposure_coef);
        Ok(Self { layout, values })
    }

    pub fn to_constrained(&self) -> FullParams {
        let l = &self.layout;
        let v = &self.values;
        let error = match l.tau {
            TauSpec::Fixed(rate) => rate,
            TauSpec::Free => ErrorRate::Single {
                tau: tau_from_free(v[0]),
            },
            TauSpec::FreeDual => ErrorRate::Dual {
                tau1: tau_from_free(v[0]),
                tau2: tau_from_free(v[1]),
            },
        };
        let phi = &v[l.phi_offset()..l.theta_offset()];
        let theta = &v[l.theta_offset()..];
        FullParams {
            error,
            propensity: PropensityParams {
                intercept: phi[0],
                weights: phi[1..].to_vec(),
                link: l.link_propensity,
            },
            outcome: OutcomeParams {
                intercept: theta[0],
                weights: theta[1..=l.d].to_vec(),
                exposure_coef: theta[l.d + 1],
                link: l.link_outcome,
            },
        }
    }
}

fn free_tau(tau: f64) -> Result<f64> {
    if tau > 0.0 && tau < 1.0 {
        Ok(logit(tau))
    } else {
        Err(Error::Domain(format!(
            "free underreporting rate {tau} must lie strictly inside (0, 1)"
        )))
    }
}

#[inline]
pub(crate) fn tau_from_free(eta: f64) -> f64 {
    expit(eta).min(TAU_CEIL)
}

/// Borrowed view pairing a layout with compatible data, evaluated without
/// per-call validation.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    layout: ParamLayout,
    data: &'a Dataset,
}

impl<'a> Objective<'a> {
    pub fn new(layout: ParamLayout, data: &'a Dataset) -> Result<Self> {
        check_dim(layout.d, data.d(), "covariate count")?;
        match (layout.tau.is_dual(), data.has_second_obs()) {
            (true, false) => Err(Error::ModeMismatch(
                "dual error model requires the a_obs2 column".into(),
            )),
            (false, true) => Err(Error::ModeMismatch(
                "single error model given data with a second exposure observation".into(),
            )),
            _ => Ok(Self { layout, data }),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Log-likelihood summed in an order that does not depend on the row
    /// order, so permuting rows leaves the value bit-identical.
    pub fn value(&self, values: &[f64]) -> f64 {
        let mut terms = Vec::with_capacity(self.data.n());
        self.range_terms(values, 0, self.data.n(), None, Some(&mut terms));
        order_free_sum(terms)
    }

    /// Log-likelihood, with the gradient written into `grad`.
    pub fn value_and_gradient(&self, values: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.range_terms(values, 0, self.data.n(), Some(grad), None)
    }

    /// Same sum accumulated chunk by chunk; partial sums are independent.
    pub fn value_chunked(&self, values: &[f64], chunk: usize) -> f64 {
        let chunk = chunk.max(1);
        let n = self.data.n();
        let partials: Vec<f64> = (0..n)
            .step_by(chunk)
            .map(|start| self.range_terms(values, start, (start + chunk).min(n), None, None))
            .collect();
        partials.iter().sum()
    }

    fn range_terms(
        &self,
        values: &[f64],
        start: usize,
        end: usize,
        mut grad: Option<&mut [f64]>,
        mut terms: Option<&mut Vec<f64>>,
    ) -> f64 {
        let l = &self.layout;
        let d = l.d;
        let (tau1, tau2, dtau1, dtau2) = match l.tau {
            TauSpec::Fixed(ErrorRate::Single { tau }) => (tau, None, 0.0, 0.0),
            TauSpec::Fixed(ErrorRate::Dual { tau1, tau2 }) => (tau1, Some(tau2), 0.0, 0.0),
            TauSpec::Free => (tau_from_free(values[0]), None, tau_slope(values[0]), 0.0),
            TauSpec::FreeDual => (
                tau_from_free(values[0]),
                Some(tau_from_free(values[1])),
                tau_slope(values[0]),
                tau_slope(values[1]),
            ),
        };
        let phi_off = l.phi_offset();
        let theta_off = l.theta_offset();
        let phi = &values[phi_off..theta_off];
        let theta = &values[theta_off..];
        let theta_a = theta[d + 1];
        let a_obs = self.data.a_obs();
        let a_obs2 = self.data.a_obs2();
        let ys = self.data.y();

        let mut total = 0.0;
        for i in start..end {
            let x = self.data.row(i);
            let y = ys[i];
            let obs1 = a_obs[i];

            // Error-model weights for the a = 1 and a = 0 branches, plus the
            // partial derivatives of the a = 1 weight in each rate.
            let (e1, e0, de1_t1, de1_t2) = match (tau2, a_obs2) {
                (Some(t2), Some(second)) => {
                    let obs2 = second[i];
                    let f1 = error_entry(tau1, obs1, true);
                    let f2 = error_entry(t2, obs2, true);
                    let e0 = if !obs1 && !obs2 { 1.0 } else { 0.0 };
                    (f1 * f2, e0, rate_sign(obs1) * f2, rate_sign(obs2) * f1)
                }
                _ => (
                    error_entry(tau1, obs1, true),
                    error_entry(tau1, obs1, false),
                    rate_sign(obs1),
                    0.0,
                ),
            };

            let eta_p = phi[0] + dot(&phi[1..], x);
            let (pi1, dpi1) = l.link_propensity.response(eta_p, true);
            let (pi0, dpi0) = l.link_propensity.response(eta_p, false);

            let base = theta[0] + dot(&theta[1..=d], x);
            let (q1, dq1) = l.link_outcome.response(base + theta_a, y);
            let (q0, dq0) = l.link_outcome.response(base, y);

            let w1 = e1 * pi1 * q1;
            let w0 = e0 * pi0 * q0;
            let p = w1 + w0;
            let term = p.ln();
            total += term;
            if let Some(t) = terms.as_deref_mut() {
                t.push(term);
            }

            if let Some(g) = grad.as_deref_mut() {
                let inv = 1.0 / p;
                let g_eta_p = (e1 * q1 * dpi1 + e0 * q0 * dpi0) * inv;
                let g_theta_a = e1 * pi1 * dq1 * inv;
                let g_base = g_theta_a + e0 * pi0 * dq0 * inv;

                match l.tau {
                    TauSpec::Free => g[0] += de1_t1 * pi1 * q1 * inv * dtau1,
                    TauSpec::FreeDual => {
                        g[0] += de1_t1 * pi1 * q1 * inv * dtau1;
                        g[1] += de1_t2 * pi1 * q1 * inv * dtau2;
                    }
                    TauSpec::Fixed(_) => {}
                }
                g[phi_off] += g_eta_p;
                g[theta_off] += g_base;
                for (j, &xj) in x.iter().enumerate() {
                    g[phi_off + 1 + j] += g_eta_p * xj;
                    g[theta_off + 1 + j] += g_base * xj;
                }
                g[theta_off + d + 1] += g_theta_a;
            }
        }
        total
    }
}

/// `∂ M^τ[ã, 1] / ∂τ`.
#[inline]
fn rate_sign(a_obs: bool) -> f64 {
    if a_obs {
        -1.0
    } else {
        1.0
    }
}

/// `dτ / d logit(τ)`, zero where `τ` is clamped.
#[inline]
fn tau_slope(eta: f64) -> f64 {
    if expit(eta) > TAU_CEIL {
        0.0
    } else {
        expit_slope(eta)
    }
}

/// Sum over samples of `log p(y_i, ã_i | x_i)`.
pub fn log_likelihood(u: &UnconstrainedParams, data: &Dataset) -> Result<f64> {
    let obj = Objective::new(u.layout, data)?;
    check_dim(u.layout.len(), u.values.len(), "free parameter count")?;
    Ok(obj.value(&u.values))
}

/// Analytic gradient of [`log_likelihood`] in the free parameters.
pub fn gradient(u: &UnconstrainedParams, data: &Dataset) -> Result<Vec<f64>> {
    let obj = Objective::new(u.layout, data)?;
    check_dim(u.layout.len(), u.values.len(), "free parameter count")?;
    let mut grad = vec![0.0; u.values.len()];
    obj.value_and_gradient(&u.values, &mut grad);
    Ok(grad)
}

/// Central-difference approximation of [`gradient`].
pub fn fd_gradient_oracle(u: &UnconstrainedParams, data: &Dataset, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step {step} must be > 0")));
    }
    let obj = Objective::new(u.layout, data)?;
    check_dim(u.layout.len(), u.values.len(), "free parameter count")?;
    let mut probe = u.values.clone();
    let mut out = Vec::with_capacity(probe.len());
    for k in 0..probe.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let hi = obj.value(&probe);
        probe[k] = orig - step;
        let lo = obj.value(&probe);
        probe[k] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}
