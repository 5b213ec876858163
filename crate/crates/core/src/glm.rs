//! Plain Bernoulli regression on fully observed responses. Used for warm
//! starts and for the mutual-information diagnostic.

use crate::links::LinkFunction;
use crate::model::dot;
use crate::optim::{minimize, LbfgsConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliFit {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub converged: bool,
}

impl BernoulliFit {
    pub fn mean(&self, link: LinkFunction, x: &[f64]) -> f64 {
        link.mean(self.intercept + dot(&self.weights, x))
    }
}

/// Maximum-likelihood fit of `P(r = 1 | z) = Ψ⁻¹(b₀ + b·z)` for a row-major
/// `n x p` design.
pub fn fit_bernoulli(
    design: &[f64],
    p: usize,
    response: &[bool],
    link: LinkFunction,
    cfg: &LbfgsConfig,
) -> BernoulliFit {
    let n = response.len();
    debug_assert_eq!(design.len(), n * p);
    let rate = response.iter().filter(|&&r| r).count() as f64 / n as f64;
    let start = link.link(rate.clamp(1e-6, 1.0 - 1e-6)).unwrap_or(0.0);
    let mut x0 = vec![0.0; p + 1];
    x0[0] = start;

    let inv_n = 1.0 / n as f64;
    let objective = |b: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for (i, &r) in response.iter().enumerate() {
            let z = &design[i * p..(i + 1) * p];
            let eta = b[0] + dot(&b[1..], z);
            let (q, dq) = link.response(eta, r);
            total += q.ln();
            let s = dq / q;
            g[0] -= s * inv_n;
            for (gj, zj) in g[1..].iter_mut().zip(z) {
                *gj -= s * zj * inv_n;
            }
        }
        -total * inv_n
    };
    let m = minimize(objective, x0, cfg);
    let converged = m.converged();
    BernoulliFit {
        intercept: m.x[0],
        weights: m.x[1..].to_vec(),
        converged,
    }
}
