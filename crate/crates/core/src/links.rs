//! Bernoulli link functions: logit, probit and complementary log-log.
//!
//! Every inverse link is clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` so the
//! log-likelihood stays finite at extreme linear predictors.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Smallest probability any model component may return.
pub const PROB_FLOOR: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Logit,
    Probit,
    Cloglog,
}

impl LinkFunction {
    pub const ALL: [LinkFunction; 3] = [Self::Logit, Self::Probit, Self::Cloglog];

    /// Maps a probability onto the linear-predictor scale.
    pub fn link(self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("link argument {p} not in (0, 1)")));
        }
        Ok(match self {
            Self::Logit => p.ln() - (-p).ln_1p(),
            Self::Probit => probit_quantile(p),
            Self::Cloglog => (-(-p).ln_1p()).ln(),
        })
    }

    /// `Ψ⁻¹(η)`, clamped away from 0 and 1.
    pub fn inverse_link(self, eta: f64) -> Result<f64> {
        check_finite(eta)?;
        Ok(self.mean(eta))
    }

    /// `d Ψ⁻¹(η) / dη` of the unclamped inverse link.
    pub fn inverse_link_derivative(self, eta: f64) -> Result<f64> {
        check_finite(eta)?;
        Ok(self.slope(eta))
    }

    pub(crate) fn mean(self, eta: f64) -> f64 {
        self.raw_upper(eta).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// `P(Y = y)` under the link together with its derivative in `η`.
    ///
    /// The derivative is that of the clamped probability, so it is zero
    /// wherever the clamp is active.
    #[inline]
    pub(crate) fn response(self, eta: f64, y: bool) -> (f64, f64) {
        let raw = if y {
            self.raw_upper(eta)
        } else {
            self.raw_lower(eta)
        };
        if raw < PROB_FLOOR {
            return (PROB_FLOOR, 0.0);
        }
        if raw > 1.0 - PROB_FLOOR {
            return (1.0 - PROB_FLOOR, 0.0);
        }
        let slope = self.slope(eta);
        (raw, if y { slope } else { -slope })
    }

    /// Unclamped `Ψ⁻¹(η)`.
    #[inline]
    fn raw_upper(self, eta: f64) -> f64 {
        match self {
            Self::Logit => expit(eta),
            Self::Probit => 0.5 * erfc(-eta * FRAC_1_SQRT_2),
            Self::Cloglog => -(-eta.exp()).exp_m1(),
        }
    }

    /// Unclamped `1 - Ψ⁻¹(η)`, computed without cancellation.
    #[inline]
    fn raw_lower(self, eta: f64) -> f64 {
        match self {
            Self::Logit => expit(-eta),
            Self::Probit => 0.5 * erfc(eta * FRAC_1_SQRT_2),
            Self::Cloglog => (-eta.exp()).exp(),
        }
    }

    #[inline]
    fn slope(self, eta: f64) -> f64 {
        match self {
            Self::Logit => expit_slope(eta),
            Self::Probit => INV_SQRT_2PI * (-0.5 * eta * eta).exp(),
            Self::Cloglog => (eta - eta.exp()).exp(),
        }
    }
}

/// Normal quantile: the `erfc` inverse polished by Newton steps on whichever
/// tail is smaller.
fn probit_quantile(p: f64) -> f64 {
    let mut z = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let resid = if p < 0.5 {
            0.5 * erfc(-z * FRAC_1_SQRT_2) - p
        } else {
            (1.0 - p) - 0.5 * erfc(z * FRAC_1_SQRT_2)
        };
        let density = INV_SQRT_2PI * (-0.5 * z * z).exp();
        if density > 0.0 {
            z -= resid / density;
        }
    }
    z
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Logit => "logit",
            Self::Probit => "probit",
            Self::Cloglog => "cloglog",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Self::Logit),
            "probit" => Ok(Self::Probit),
            "cloglog" => Ok(Self::Cloglog),
            other => Err(Error::Input(format!(
                "unknown link '{other}' (expected logit, probit or cloglog)"
            ))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `expit(x) (1 - expit(x))`, positive far into both tails.
#[inline]
pub fn expit_slope(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn check_finite(eta: f64) -> Result<()> {
    if eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("linear predictor {eta} is not finite")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_difference(link: LinkFunction, eta: f64, h: f64) -> f64 {
        (link.inverse_link(eta + h).unwrap() - link.inverse_link(eta - h).unwrap()) / (2.0 * h)
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(LinkFunction::Logit.inverse_link(0.0).unwrap(), 0.5);
        assert!((LinkFunction::Probit.inverse_link(0.0).unwrap() - 0.5).abs() < 1e-15);
        let expected = 1.0 - (-1.0f64).exp();
        assert!((LinkFunction::Cloglog.inverse_link(0.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.632_120_6).abs() < 1e-7);
    }

    #[test]
    fn derivatives_at_zero() {
        assert!((LinkFunction::Logit.inverse_link_derivative(0.0).unwrap() - 0.25).abs() < 1e-15);
        let density = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let got = LinkFunction::Probit.inverse_link_derivative(0.0).unwrap();
        assert!((got - density).abs() < 1e-15);
        assert!((got - 0.398_942_3).abs() < 1e-7);
    }

    #[test]
    fn logit_derivative_matches_central_difference() {
        let analytic = LinkFunction::Logit.inverse_link_derivative(1.7).unwrap();
        let fd = central_difference(LinkFunction::Logit, 1.7, 1e-5);
        assert!(((analytic - fd) / analytic).abs() < 1e-6);
    }

    #[test]
    fn non_finite_predictor_is_rejected() {
        for link in LinkFunction::ALL {
            assert!(matches!(link.inverse_link(f64::NAN), Err(Error::Domain(_))));
            assert!(matches!(link.inverse_link(f64::INFINITY), Err(Error::Domain(_))));
            assert!(matches!(
                link.inverse_link_derivative(f64::NEG_INFINITY),
                Err(Error::Domain(_))
            ));
        }
        assert!(LinkFunction::Logit.link(0.0).is_err());
        assert!(LinkFunction::Probit.link(1.0).is_err());
    }

    #[test]
    fn cloglog_tails() {
        let hi = LinkFunction::Cloglog.inverse_link(30.0).unwrap();
        let lo = LinkFunction::Cloglog.inverse_link(-30.0).unwrap();
        assert!((hi - 1.0).abs() <= PROB_FLOOR);
        assert!(lo <= 1e-12);
    }

    #[test]
    fn response_clamps_and_zeroes_slope() {
        let (p, dp) = LinkFunction::Logit.response(60.0, false);
        assert_eq!(p, PROB_FLOOR);
        assert_eq!(dp, 0.0);
        let (p, dp) = LinkFunction::Probit.response(0.3, false);
        assert!((p - (1.0 - LinkFunction::Probit.mean(0.3))).abs() < 1e-15);
        assert!(dp < 0.0);
    }

    #[test]
    fn parse_round_trip() {
        for link in LinkFunction::ALL {
            assert_eq!(link.to_string().parse::<LinkFunction>().unwrap(), link);
        }
        assert!("cauchit".parse::<LinkFunction>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(p in 1e-9f64..(1.0 - 1e-9)) {
            for link in LinkFunction::ALL {
                let back = link.inverse_link(link.link(p).unwrap()).unwrap();
                prop_assert!((back - p).abs() <= 1e-12, "{link}: {p} -> {back}");
            }
        }

        #[test]
        fn strictly_increasing(a in -8.0f64..8.0, gap in 1e-3f64..4.0) {
            for link in LinkFunction::ALL {
                let lo = link.inverse_link(a).unwrap();
                let hi = link.inverse_link(a + gap).unwrap();
                prop_assert!(lo < hi || (lo == hi && (hi == 1.0 - PROB_FLOOR || lo == PROB_FLOOR)));
                prop_assert!(lo > 0.0 && hi < 1.0);
            }
        }

        #[test]
        fn slope_positive_and_matches_fd(eta in -6.0f64..1.5) {
            for link in LinkFunction::ALL {
                let analytic = link.inverse_link_derivative(eta).unwrap();
                prop_assert!(analytic > 0.0);
                let fd = central_difference(link, eta, 1e-5);
                prop_assert!(((analytic - fd) / analytic).abs() < 1e-6, "{link} at {eta}");
            }
        }

        #[test]
        fn logit_closed_form(eta in -25.0f64..25.0) {
            let p = LinkFunction::Logit.inverse_link(eta).unwrap();
            prop_assert!((p * (1.0 + (-eta).exp()) - 1.0).abs() < 1e-12);
        }
    }
}
