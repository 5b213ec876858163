//! Data and parameter types, the underreporting error matrix, and the
//! per-sample joint probability `p(y, ã | x)`.
//!
//! The error model only allows false negatives: a true exposure is reported
//! with probability `1 - τ`, and an unexposed sample is never reported as
//! exposed.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::links::LinkFunction;

/// Observed samples: covariates (no intercept column), outcome, and one or
/// two error-prone exposure indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<bool>,
    a_obs: Vec<bool>,
    a_obs2: Option<Vec<bool>>,
}

impl Dataset {
    /// Builds a dataset from a row-major `n x d` covariate buffer.
    pub fn new(
        d: usize,
        x: Vec<f64>,
        y: Vec<bool>,
        a_obs: Vec<bool>,
        a_obs2: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Input("dataset must contain at least one row".into()));
        }
        check_dim(n * d, x.len(), "covariate buffer length")?;
        check_dim(n, a_obs.len(), "a_obs length")?;
        if let Some(second) = &a_obs2 {
            check_dim(n, second.len(), "a_obs2 length")?;
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite covariate at row {}, column {}",
                pos / d.max(1),
                pos % d.max(1)
            )));
        }
        Ok(Self {
            n,
            d,
            x,
            y,
            a_obs,
            a_obs2,
        })
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        y: Vec<bool>,
        a_obs: Vec<bool>,
        a_obs2: Option<Vec<bool>>,
    ) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * d);
        for row in rows {
            check_dim(d, row.len(), "covariate row length")?;
            x.extend_from_slice(row);
        }
        check_dim(rows.len(), y.len(), "number of covariate rows")?;
        Self::new(d, x, y, a_obs, a_obs2)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn a_obs(&self) -> &[bool] {
        &self.a_obs
    }

    pub fn a_obs2(&self) -> Option<&[bool]> {
        self.a_obs2.as_deref()
    }

    pub fn has_second_obs(&self) -> bool {
        self.a_obs2.is_some()
    }

    /// Same samples with the second exposure indicator dropped.
    pub fn single_obs(&self) -> Dataset {
        Dataset {
            a_obs2: None,
            ..self.clone()
        }
    }

    /// Rows picked by index, repeats allowed (bootstrap resampling).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::Input(format!("row index {i} out of range")));
            }
            x.extend_from_slice(self.row(i));
        }
        let pick = |v: &[bool]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset::new(
            self.d,
            x,
            pick(&self.y),
            pick(&self.a_obs),
            self.a_obs2.as_deref().map(pick),
        )
    }
}

/// Underreporting rate `τ` (or one rate per observation in dual mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ErrorRate {
    Single { tau: f64 },
    Dual { tau1: f64, tau2: f64 },
}

impl ErrorRate {
    pub fn single(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self::Single { tau })
    }

    pub fn dual(tau1: f64, tau2: f64) -> Result<Self> {
        check_tau(tau1)?;
        check_tau(tau2)?;
        Ok(Self::Dual { tau1, tau2 })
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, Self::Dual { .. })
    }

    pub fn components(&self) -> Vec<f64> {
        match *self {
            Self::Single { tau } => vec![tau],
            Self::Dual { tau1, tau2 } => vec![tau1, tau2],
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Domain(format!("underreporting rate {tau} not in [0, 1)")))
    }
}

/// Entry `M^τ[ã, a]` of the column-stochastic error matrix.
pub fn error_prob(tau: f64, a_obs: bool, a: bool) -> Result<f64> {
    check_tau(tau)?;
    Ok(error_entry(tau, a_obs, a))
}

#[inline]
pub(crate) fn error_entry(tau: f64, a_obs: bool, a: bool) -> f64 {
    match (a_obs, a) {
        (false, false) => 1.0,
        (true, false) => 0.0,
        (false, true) => tau,
        (true, true) => 1.0 - tau,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityParams {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub link: LinkFunction,
}

impl PropensityParams {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), x.len(), "propensity covariates")?;
        Ok(self.intercept + dot(&self.weights, x))
    }

    /// `p_φ(A = 1 | x)`.
    pub fn propensity_prob(&self, x: &[f64]) -> Result<f64> {
        self.link.inverse_link(self.linear_predictor(x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// Coefficient on the true exposure.
    pub exposure_coef: f64,
    pub link: LinkFunction,
}

impl OutcomeParams {
    pub fn linear_predictor(&self, a: bool, x: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), x.len(), "outcome covariates")?;
        let shift = if a { self.exposure_coef } else { 0.0 };
        Ok(self.intercept + dot(&self.weights, x) + shift)
    }

    /// `p_θ(Y = 1 | a, x)`.
    pub fn mean(&self, a: bool, x: &[f64]) -> Result<f64> {
        self.link.inverse_link(self.linear_predictor(a, x)?)
    }

    /// `p_θ(y | a, x)`.
    pub fn outcome_prob(&self, a: bool, x: &[f64], y: bool) -> Result<f64> {
        let eta = self.linear_predictor(a, x)?;
        if !eta.is_finite() {
            return Err(Error::Domain(format!("outcome predictor {eta} is not finite")));
        }
        Ok(self.link.response(eta, y).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullParams {
    pub error: ErrorRate,
    pub propensity: PropensityParams,
    pub outcome: OutcomeParams,
}

impl FullParams {
    pub fn new(
        error: ErrorRate,
        propensity: PropensityParams,
        outcome: OutcomeParams,
    ) -> Result<Self> {
        let params = Self {
            error,
            propensity,
            outcome,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn d(&self) -> usize {
        self.propensity.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        for tau in self.error.components() {
            check_tau(tau)?;
        }
        check_dim(self.d(), self.outcome.weights.len(), "outcome weight count")?;
        let finite = std::iter::once(self.propensity.intercept)
            .chain(self.propensity.weights.iter().copied())
            .chain([self.outcome.intercept, self.outcome.exposure_coef])
            .chain(self.outcome.weights.iter().copied())
            .all(f64::is_finite);
        if finite {
            Ok(())
        } else {
            Err(Error::Domain("non-finite model coefficient".into()))
        }
    }

    /// `Σ_a p(ã | a) p_φ(a | x) p_θ(y | a, x)` for one sample.
    ///
    /// `a_obs2` must be present exactly when the error rate is dual.
    pub fn joint_conditional(
        &self,
        x: &[f64],
        a_obs: bool,
        a_obs2: Option<bool>,
        y: bool,
    ) -> Result<f64> {
        let (e1, e0) = match (self.error, a_obs2) {
            (ErrorRate::Single { tau }, None) => {
                (error_entry(tau, a_obs, true), error_entry(tau, a_obs, false))
            }
            (ErrorRate::Dual { tau1, tau2 }, Some(second)) => (
                error_entry(tau1, a_obs, true) * error_entry(tau2, second, true),
                error_entry(tau1, a_obs, false) * error_entry(tau2, second, false),
            ),
            (ErrorRate::Single { .. }, Some(_)) => {
                return Err(Error::ModeMismatch(
                    "second exposure observation supplied with a single error rate".into(),
                ))
            }
            (ErrorRate::Dual { .. }, None) => {
                return Err(Error::ModeMismatch(
                    "dual error rate requires a second exposure observation".into(),
                ))
            }
        };
        let eta = self.propensity.linear_predictor(x)?;
        let pi1 = self.propensity.link.response(eta, true).0;
        let pi0 = self.propensity.link.response(eta, false).0;
        let q1 = self.outcome.outcome_prob(true, x, y)?;
        let q0 = self.outcome.outcome_prob(false, x, y)?;
        Ok(e1 * pi1 * q1 + e0 * pi0 * q0)
    }
}

#[inline]
/// Sum of `values` taken in ascending order, so the result depends only on
/// the multiset of values.
pub(crate) fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::expit;
    use proptest::prelude::*;

    fn logit_params(tau: f64, phi: (f64, Vec<f64>), theta: (f64, Vec<f64>, f64)) -> FullParams {
        FullParams::new(
            ErrorRate::single(tau).unwrap(),
            PropensityParams {
                intercept: phi.0,
                weights: phi.1,
                link: LinkFunction::Logit,
            },
            OutcomeParams {
                intercept: theta.0,
                weights: theta.1,
                exposure_coef: theta.2,
                link: LinkFunction::Logit,
            },
        )
        .unwrap()
    }

    #[test]
    fn error_matrix_entries() {
        assert_eq!(error_prob(0.3, false, true).unwrap(), 0.3);
        assert_eq!(error_prob(0.7, true, false).unwrap(), 0.0);
        assert_eq!(error_prob(0.0, true, true).unwrap(), 1.0);
        assert_eq!(error_prob(0.4, false, false).unwrap(), 1.0);
        assert!(matches!(error_prob(1.0, true, true), Err(Error::Domain(_))));
        assert!(matches!(error_prob(-0.1, true, true), Err(Error::Domain(_))));
    }

    #[test]
    fn propensity_examples() {
        let flat = PropensityParams {
            intercept: 0.0,
            weights: vec![0.0, 0.0],
            link: LinkFunction::Logit,
        };
        assert_eq!(flat.propensity_prob(&[3.0, -7.0]).unwrap(), 0.5);
        let p = PropensityParams {
            intercept: 1.0,
            weights: vec![1.0],
            link: LinkFunction::Logit,
        };
        assert_eq!(p.propensity_prob(&[-1.0]).unwrap(), 0.5);
        let p = PropensityParams {
            intercept: 0.0,
            weights: vec![2.0],
            link: LinkFunction::Logit,
        };
        assert!((p.propensity_prob(&[1.0]).unwrap() - 0.880_797_1).abs() < 1e-7);
        assert!(matches!(
            p.propensity_prob(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outcome_examples() {
        let null = OutcomeParams {
            intercept: 0.3,
            weights: vec![0.5],
            exposure_coef: 0.0,
            link: LinkFunction::Probit,
        };
        assert_eq!(
            null.outcome_prob(true, &[1.0], true).unwrap(),
            null.outcome_prob(false, &[1.0], true).unwrap()
        );
        let theta = OutcomeParams {
            intercept: 0.0,
            weights: vec![0.0],
            exposure_coef: 1.0,
            link: LinkFunction::Logit,
        };
        let p = theta.outcome_prob(true, &[2.0], true).unwrap();
        assert!((p - 0.731_058_6).abs() < 1e-7);
        let total = theta.outcome_prob(true, &[2.0], true).unwrap()
            + theta.outcome_prob(true, &[2.0], false).unwrap();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn joint_hand_evaluation() {
        // π = 0.5, τ = 0.5, p(y=1|a=1) = 0.7, p(y=1|a=0) = 0.4
        let theta0 = logit_of(0.4);
        let theta_a = logit_of(0.7) - theta0;
        let params = logit_params(0.5, (0.0, vec![]), (theta0, vec![], theta_a));
        let p = params.joint_conditional(&[], false, None, true).unwrap();
        assert!((p - 0.375).abs() < 1e-12);

        let p1 = params.joint_conditional(&[], true, None, true).unwrap();
        assert!((p1 - 0.5 * 0.5 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn tau_zero_collapses_to_observed_exposure() {
        let params = logit_params(0.0, (0.3, vec![0.8]), (-0.2, vec![1.1], 0.9));
        let x = [0.4];
        for a_obs in [false, true] {
            for y in [false, true] {
                let joint = params.joint_conditional(&x, a_obs, None, y).unwrap();
                let pa = if a_obs {
                    expit(0.3 + 0.32)
                } else {
                    1.0 - expit(0.3 + 0.32)
                };
                let py = params.outcome.outcome_prob(a_obs, &x, y).unwrap();
                assert!((joint - pa * py).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_mismatch_is_reported() {
        let params = logit_params(0.2, (0.0, vec![]), (0.0, vec![], 1.0));
        assert!(matches!(
            params.joint_conditional(&[], true, Some(true), true),
            Err(Error::ModeMismatch(_))
        ));
        let dual = FullParams {
            error: ErrorRate::dual(0.1, 0.2).unwrap(),
            ..params
        };
        assert!(matches!(
            dual.joint_conditional(&[], true, None, true),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(1, vec![], vec![], vec![], None).is_err());
        assert!(Dataset::new(1, vec![1.0, 2.0], vec![true], vec![false], None).is_err());
        assert!(Dataset::new(1, vec![f64::NAN], vec![true], vec![false], None).is_err());
        assert!(Dataset::new(0, vec![], vec![true], vec![false], Some(vec![])).is_err());
        let ds = Dataset::new(0, vec![], vec![true, false], vec![false, false], None).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.row(1), &[] as &[f64]);
        let picked = ds.select_rows(&[1, 1, 0]).unwrap();
        assert_eq!(picked.y(), &[false, false, true]);
    }

    fn logit_of(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn any_link() -> impl Strategy<Value = LinkFunction> {
        prop_oneof![
            Just(LinkFunction::Logit),
            Just(LinkFunction::Probit),
            Just(LinkFunction::Cloglog)
        ]
    }

    proptest! {
        #[test]
        fn columns_are_stochastic(tau in 0.0f64..0.999_999) {
            for a in [false, true] {
                let col = error_prob(tau, false, a).unwrap() + error_prob(tau, true, a).unwrap();
                prop_assert!((col - 1.0).abs() < 1e-15);
            }
            let det = error_prob(tau, false, false).unwrap() * error_prob(tau, true, true).unwrap()
                - error_prob(tau, false, true).unwrap() * error_prob(tau, true, false).unwrap();
            prop_assert!((det - (1.0 - tau)).abs() < 1e-15);
            prop_assert!(det != 0.0);
        }

        #[test]
        fn joint_normalizes(
            tau1 in 0.0f64..0.99,
            tau2 in 0.0f64..0.99,
            lp in any_link(),
            lo in any_link(),
            coefs in proptest::collection::vec(-2.0f64..2.0, 7),
            x in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let single = FullParams::new(
                ErrorRate::single(tau1).unwrap(),
                PropensityParams { intercept: coefs[0], weights: coefs[1..3].to_vec(), link: lp },
                OutcomeParams {
                    intercept: coefs[3],
                    weights: coefs[4..6].to_vec(),
                    exposure_coef: coefs[6],
                    link: lo,
                },
            ).unwrap();
            let mut total = 0.0;
            for y in [false, true] {
                for a in [false, true] {
                    let p = single.joint_conditional(&x, a, None, y).unwrap();
                    prop_assert!(p >= 0.0);
                    total += p;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-12);

            let dual = FullParams { error: ErrorRate::dual(tau1, tau2).unwrap(), ..single };
            let mut total = 0.0;
            for y in [false, true] {
                for a1 in [false, true] {
                    for a2 in [false, true] {
                        total += dual.joint_conditional(&x, a1, Some(a2), y).unwrap();
                    }
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
