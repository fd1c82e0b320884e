//! Marginal log-likelihood of the random-intercept binomial model and its
//! exact gradient.
//!
//! Each cluster contributes `log ∫ Bin(y | n, logistic(η + u)) N(u | 0, σ²) du`,
//! approximated by adaptive Gauss–Hermite quadrature centred at the mode `û`
//! of the integrand with scale `s = (−h''(û))^{-1/2}`. The gradient
//! differentiates the quadrature formula itself, including the dependence of
//! `û` and `s` on the parameters, so it matches finite differences of
//! [`marginal_loglik`] to rounding error.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DVector;

use super::design::FitSpec;
use super::quadrature::GaussHermite;
use crate::error::{Error, Result};
use crate::math::{binomial_loglik, ln_binomial, logistic, softplus};

/// Posterior mode of one cluster's random intercept and the negative second
/// derivative of the log joint density there.
pub fn cluster_mode(n: u64, y: u64, eta: f64, sigma2: f64) -> Option<(f64, f64)> {
    let (nf, yf) = (n as f64, y as f64);
    let objective = |u: f64| yf * (eta + u) - nf * softplus(eta + u) - u * u / (2.0 * sigma2);
    let curvature = |u: f64| {
        let p = logistic(eta + u);
        nf * p * (1.0 - p) + 1.0 / sigma2
    };
    let mut u = 0.0f64;
    let mut value = objective(u);
    for _ in 0..500 {
        let p = logistic(eta + u);
        let grad = yf - nf * p - u / sigma2;
        let step = grad / curvature(u);
        if !step.is_finite() {
            return None;
        }
        if step.abs() <= 1e-14 * (1.0 + u.abs()) {
            return Some((u, curvature(u)));
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = u + t * step;
            let v = objective(cand);
            if v.is_finite() && v >= value - 1e-15 * value.abs() {
                u = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Some((u, curvature(u)));
        }
    }
    None
}

/// One cluster's log marginal likelihood and its derivatives with respect to
/// the linear predictor `η` and to `τ = log σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterTerms {
    pub loglik: f64,
    pub d_eta: f64,
    pub d_log_sigma2: f64,
}

pub fn cluster_terms(
    n: u64,
    y: u64,
    eta: f64,
    sigma2: f64,
    rule: &GaussHermite,
    gradient: bool,
) -> Option<ClusterTerms> {
    if sigma2 == 0.0 {
        return Some(ClusterTerms {
            loglik: binomial_loglik(n, y, eta),
            d_eta: y as f64 - n as f64 * logistic(eta),
            d_log_sigma2: 0.0,
        });
    }
    let (nf, yf) = (n as f64, y as f64);
    let (mode, neg_h) = cluster_mode(n, y, eta, sigma2)?;
    let s = 1.0 / neg_h.sqrt();
    let scale = SQRT_2 * s;
    let norm = ln_binomial(n, y) - 0.5 * (2.0 * PI * sigma2).ln();

    let k = rule.len();
    let mut log_terms = vec![0.0f64; k];
    let mut us = vec![0.0f64; k];
    let mut max = f64::NEG_INFINITY;
    for j in 0..k {
        let u = mode + scale * rule.nodes[j];
        let e = eta + u;
        let h = norm + yf * e - nf * softplus(e) - u * u / (2.0 * sigma2);
        let a = rule.log_adjusted[j] + h;
        us[j] = u;
        log_terms[j] = a;
        max = max.max(a);
    }
    let sum: f64 = log_terms.iter().map(|a| (a - max).exp()).sum();
    let loglik = scale.ln() + max + sum.ln();
    if !loglik.is_finite() {
        return None;
    }
    if !gradient {
        return Some(ClusterTerms {
            loglik,
            d_eta: 0.0,
            d_log_sigma2: 0.0,
        });
    }

    let mut a_eta = 0.0;
    let mut a_tau = 0.0;
    let mut d_mode = 0.0;
    let mut d_scale = 1.0 / s;
    for j in 0..k {
        let w = (log_terms[j] - max).exp() / sum;
        let u = us[j];
        let r = yf - nf * logistic(eta + u);
        let h1 = r - u / sigma2;
        a_eta += w * r;
        a_tau += w * (u * u / (2.0 * sigma2) - 0.5);
        d_mode += w * h1;
        d_scale += w * h1 * SQRT_2 * rule.nodes[j];
    }
    let p = logistic(eta + mode);
    let v = p * (1.0 - p);
    let h2 = -neg_h;
    let h3 = -nf * v * (1.0 - 2.0 * p);
    let mode_eta = nf * v / h2;
    let mode_tau = -(mode / sigma2) / h2;
    let h2_eta = h3 * (1.0 + mode_eta);
    let h2_tau = h3 * mode_tau + 1.0 / sigma2;
    let s3 = 0.5 * s * s * s;
    Some(ClusterTerms {
        loglik,
        d_eta: a_eta + d_mode * mode_eta + d_scale * s3 * h2_eta,
        d_log_sigma2: a_tau + d_mode * mode_tau + d_scale * s3 * h2_tau,
    })
}

/// Evaluator bound to one fit specification and quadrature rule.
#[derive(Debug, Clone)]
pub struct MarginalLikelihood<'a> {
    spec: &'a FitSpec,
    rule: GaussHermite,
}

impl<'a> MarginalLikelihood<'a> {
    pub fn new(spec: &'a FitSpec) -> Self {
        Self::with_nodes(spec, spec.options.quadrature_nodes)
    }

    pub fn with_nodes(spec: &'a FitSpec, nodes: usize) -> Self {
        MarginalLikelihood {
            spec,
            rule: GaussHermite::new(nodes),
        }
    }

    pub fn spec(&self) -> &FitSpec {
        self.spec
    }

    fn linear_predictor(&self, beta: &[f64]) -> Result<DVector<f64>> {
        let p = self.spec.design.n_cols();
        if beta.len() != p {
            return Err(Error::Validation(format!(
                "beta has {} entries, design has {p} columns",
                beta.len()
            )));
        }
        Ok(&self.spec.design.matrix * DVector::from_column_slice(beta))
    }

    fn accumulate(&self, beta: &[f64], sigma2: f64, gradient: bool) -> Result<(f64, DVector<f64>, f64)> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::Validation(format!("variance must be finite and >= 0, got {sigma2}")));
        }
        let eta = self.linear_predictor(beta)?;
        let mut total = 0.0;
        let mut d_eta = DVector::zeros(eta.len());
        let mut d_tau = 0.0;
        for (i, c) in self.spec.clusters.iter().enumerate() {
            let t = cluster_terms(c.n_trials, c.n_success, eta[i], sigma2, &self.rule, gradient)
                .ok_or_else(|| Error::numeric(&c.id, "non-finite marginal likelihood term"))?;
            total += t.loglik;
            d_eta[i] = t.d_eta;
            d_tau += t.d_log_sigma2;
        }
        Ok((total, d_eta, d_tau))
    }

    pub fn value(&self, beta: &[f64], sigma2: f64) -> Result<f64> {
        self.accumulate(beta, sigma2, false).map(|r| r.0)
    }

    /// Value and gradient over `(β, log σ²)`; requires `σ² > 0`.
    pub fn value_and_gradient(&self, beta: &[f64], log_sigma2: f64) -> Result<(f64, DVector<f64>)> {
        let (v, d_eta, d_tau) = self.accumulate(beta, log_sigma2.exp(), true)?;
        let p = beta.len();
        let mut g = DVector::zeros(p + 1);
        g.rows_mut(0, p)
            .copy_from(&(self.spec.design.matrix.transpose() * d_eta));
        g[p] = d_tau;
        Ok((v, g))
    }

    /// Value and gradient over `β` with `σ²` held fixed (zero allowed).
    pub fn value_and_beta_gradient(&self, beta: &[f64], sigma2: f64) -> Result<(f64, DVector<f64>)> {
        let (v, d_eta, _) = self.accumulate(beta, sigma2, true)?;
        Ok((v, self.spec.design.matrix.transpose() * d_eta))
    }
}

/// Marginal log-likelihood using the spec's quadrature setting.
pub fn marginal_loglik(spec: &FitSpec, beta: &[f64], sigma2: f64) -> Result<f64> {
    MarginalLikelihood::new(spec).value(beta, sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::design::{Cluster, Design, FitOptions};

    fn spec(data: &[(u64, u64)], nodes: usize) -> FitSpec {
        let clusters = data
            .iter()
            .enumerate()
            .map(|(i, (n, y))| Cluster { id: format!("c{i}"), n_trials: *n, n_success: *y })
            .collect();
        let opts = FitOptions { quadrature_nodes: nodes, ..FitOptions::default() };
        FitSpec::new(clusters, Design::intercept_only(data.len()), opts).unwrap()
    }

    /// Trapezoid rule over u ∈ [−10σ, 10σ], accumulated in log space.
    fn brute_force(data: &[(u64, u64)], beta0: f64, sigma2: f64) -> f64 {
        let sigma = sigma2.sqrt();
        let steps = 400_000;
        let h = 20.0 * sigma / steps as f64;
        data.iter()
            .map(|(n, y)| {
                let f = |u: f64| {
                    binomial_loglik(*n, *y, beta0 + u) - u * u / (2.0 * sigma2)
                        - 0.5 * (2.0 * PI * sigma2).ln()
                };
                let vals: Vec<f64> = (0..=steps).map(|k| f(-10.0 * sigma + k as f64 * h)).collect();
                let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = vals
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                        w * (v - m).exp()
                    })
                    .sum();
                m + (s * h).ln()
            })
            .sum()
    }

    const TOY: [(u64, u64); 5] = [(20, 3), (35, 9), (12, 0), (50, 11), (8, 8)];

    #[test]
    fn zero_variance_is_plain_binomial() {
        let s = spec(&TOY, 8);
        let direct: f64 = TOY.iter().map(|(n, y)| binomial_loglik(*n, *y, -1.1)).sum();
        assert_eq!(marginal_loglik(&s, &[-1.1], 0.0).unwrap(), direct);
    }

    #[test]
    fn single_bernoulli_at_zero() {
        let s = spec(&[(1, 0)], 8);
        assert!((marginal_loglik(&s, &[0.0], 0.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_integration() {
        for (beta0, sigma2) in [(-1.2, 0.3), (-0.4, 1.5), (-2.0, 0.05)] {
            let oracle = brute_force(&TOY, beta0, sigma2);
            let got = MarginalLikelihood::with_nodes(&spec(&TOY, 32), 32)
                .value(&[beta0], sigma2)
                .unwrap();
            assert!((got - oracle).abs() < 1e-6, "({beta0},{sigma2}): {got} vs {oracle}");
        }
        // The default 8-node rule is already accurate on large clusters.
        let big = [(800, 95), (1500, 160), (620, 40), (2900, 350), (510, 66)];
        let oracle = brute_force(&big, -2.0, 0.28);
        let got = marginal_loglik(&spec(&big, 8), &[-2.0], 0.28).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn laplace_gap_shrinks_with_variance() {
        let s = spec(&TOY, 1);
        let gap = |sigma2: f64| {
            let l1 = MarginalLikelihood::with_nodes(&s, 1).value(&[-1.0], sigma2).unwrap();
            let l64 = MarginalLikelihood::with_nodes(&s, 64).value(&[-1.0], sigma2).unwrap();
            (l1 - l64).abs()
        };
        let gaps: Vec<f64> = [2.0, 0.5, 0.1, 0.01, 0.001].iter().map(|v| gap(*v)).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        for nodes in [1, 8, 20] {
            let s = spec(&TOY, nodes);
            let ml = MarginalLikelihood::new(&s);
            let (beta0, tau) = (-0.9, (0.7f64).ln());
            let (_, g) = ml.value_and_gradient(&[beta0], tau).unwrap();
            let h = 1e-5;
            let fd0 = (ml.value(&[beta0 + h], tau.exp()).unwrap() - ml.value(&[beta0 - h], tau.exp()).unwrap()) / (2.0 * h);
            let fd1 = (ml.value(&[beta0], (tau + h).exp()).unwrap() - ml.value(&[beta0], (tau - h).exp()).unwrap()) / (2.0 * h);
            assert!((g[0] - fd0).abs() < 1e-6 * g[0].abs().max(1.0), "nodes={nodes}: {} vs {fd0}", g[0]);
            assert!((g[1] - fd1).abs() < 1e-6 * g[1].abs().max(1.0), "nodes={nodes}: {} vs {fd1}", g[1]);
        }
    }

    #[test]
    fn mode_solves_score_equation() {
        for (n, y, eta, s2) in [(500u64, 80u64, -2.0, 0.3), (1000, 0, -2.0, 0.5), (30, 30, 0.5, 4.0)] {
            let (u, neg_h) = cluster_mode(n, y, eta, s2).unwrap();
            let p = logistic(eta + u);
            let score = y as f64 - n as f64 * p - u / s2;
            assert!(score.abs() < 1e-8 * n as f64, "{score}");
            assert!(neg_h > 0.0);
        }
    }
}
