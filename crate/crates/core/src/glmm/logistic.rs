//! Plain binomial logistic regression (the σ² = 0 model) by Newton–Raphson.

use nalgebra::{DMatrix, DVector};

use super::design::FitSpec;
use crate::error::{Error, Result};
use crate::math::{binomial_loglik, logistic, logit};

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    pub log_likelihood: f64,
    /// Fisher information `Xᵀ W X` at the estimate.
    pub information: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn loglik(spec: &FitSpec, eta: &DVector<f64>) -> f64 {
    spec.clusters
        .iter()
        .zip(eta.iter())
        .map(|(c, e)| binomial_loglik(c.n_trials, c.n_success, *e))
        .sum()
}

/// Starting point: intercept at the pooled logit, all other coefficients 0.
pub fn pooled_start(spec: &FitSpec) -> DVector<f64> {
    let (n, y) = spec
        .clusters
        .iter()
        .fold((0u64, 0u64), |acc, c| (acc.0 + c.n_trials, acc.1 + c.n_success));
    let rate = ((y as f64 + 0.5) / (n as f64 + 1.0)).clamp(1e-6, 1.0 - 1e-6);
    let mut b = DVector::zeros(spec.design.n_cols());
    if let Some(i) = spec.design.column_index(super::design::INTERCEPT) {
        b[i] = logit(rate);
    }
    b
}

pub fn fit_logistic(spec: &FitSpec) -> Result<LogisticFit> {
    let x = &spec.design.matrix;
    let n: DVector<f64> = DVector::from_iterator(spec.clusters.len(), spec.clusters.iter().map(|c| c.n_trials as f64));
    let y: DVector<f64> = DVector::from_iterator(spec.clusters.len(), spec.clusters.iter().map(|c| c.n_success as f64));
    let mut beta = pooled_start(spec);
    let mut eta = x * &beta;
    let mut ll = loglik(spec, &eta);
    let scale = 1.0 + n.sum();
    for it in 1..=200 {
        let p = eta.map(logistic);
        let w = n.component_mul(&p.map(|v| v * (1.0 - v)));
        let score = x.transpose() * (&y - n.component_mul(&p));
        let info = x.transpose() * DMatrix::from_diagonal(&w) * x;
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("logistic information matrix".into()))?;
        let step = chol.solve(&score);
        if score.norm() < 1e-12 * scale || step.amax() < 1e-12 {
            beta += &step;
            let eta = x * &beta;
            return Ok(LogisticFit {
                log_likelihood: loglik(spec, &eta),
                beta,
                information: info,
                iterations: it,
                converged: true,
            });
        }
        let mut t = 1.0;
        loop {
            let cand = &beta + t * &step;
            let eta_c = x * &cand;
            let ll_c = loglik(spec, &eta_c);
            if ll_c >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                beta = cand;
                eta = eta_c;
                ll = ll_c;
                break;
            }
            t *= 0.5;
        }
        if !beta.iter().all(|b| b.is_finite()) || beta.amax() > 50.0 {
            break;
        }
    }
    let p = eta.map(logistic);
    let w = n.component_mul(&p.map(|v| v * (1.0 - v)));
    Ok(LogisticFit {
        information: x.transpose() * DMatrix::from_diagonal(&w) * x,
        beta,
        log_likelihood: ll,
        iterations: 200,
        converged: false,
    })
}
