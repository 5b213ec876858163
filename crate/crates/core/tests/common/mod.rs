//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use underreport::{LinkFunction, TauSpec};

pub fn inv_link(link: LinkFunction, eta: f64) -> f64 {
    match link {
        LinkFunction::Logit => 1.0 / (1.0 + (-eta).exp()),
        LinkFunction::Probit => normal_cdf(eta),
        LinkFunction::Cloglog => 1.0 - (-eta.exp()).exp(),
    }
}

/// Standard normal CDF from the Taylor series
/// `Φ(x) = 1/2 + φ(x) Σ x^(2k+1) / (2k+1)!!`, accurate in absolute terms for
/// moderate `|x|`.
pub fn normal_cdf(x: f64) -> f64 {
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs() {
        term *= x * x / (2.0 * k + 1.0);
        sum += term;
        k += 1.0;
    }
    0.5 + density * sum
}

pub fn expit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Entry `P(ã | a)` of the underreporting matrix, written out by hand.
pub fn misreport(tau: f64, a_obs: bool, a: bool) -> f64 {
    match (a_obs, a) {
        (true, true) => 1.0 - tau,
        (false, true) => tau,
        (true, false) => 0.0,
        (false, false) => 1.0,
    }
}

/// Nearest-rank percentile of a sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Solves `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Logistic regression by Newton-Raphson. `design` rows exclude the
/// intercept; the returned vector starts with it.
pub fn newton_logistic(design: &[Vec<f64>], response: &[bool]) -> Vec<f64> {
    let p = design[0].len() + 1;
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (row, &r) in design.iter().zip(response) {
            let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            let eta: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            let resid = if r { 1.0 } else { 0.0 } - mu;
            for j in 0..p {
                grad[j] += resid * z[j];
                for k in 0..p {
                    hess[j][k] += w * z[j] * z[k];
                }
            }
        }
        let step = solve(hess, grad);
        let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-13 {
            break;
        }
    }
    beta
}

/// Random binary column with success probability `p`.
pub fn bits<R: Rng>(rng: &mut R, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < p).collect()
}

/// Random free-parameter vector for `spec` with moderate linear predictors
/// when covariates lie in `[-1, 1]`.
pub fn random_values<R: Rng>(rng: &mut R, spec: TauSpec, d: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for _ in 0..spec.n_free() {
        v.push(logit(rng.random_range(0.05..0.9)));
    }
    v.push(rng.random_range(-0.8..0.8));
    for _ in 0..d {
        v.push(rng.random_range(-0.5..0.5));
    }
    v.push(rng.random_range(-0.8..0.8));
    for _ in 0..d {
        v.push(rng.random_range(-0.5..0.5));
    }
    v.push(rng.random_range(-0.8..0.8));
    v
}
