use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::FitSpec;
use super::likelihood::{cluster_mode, MarginalLikelihood};
use super::logistic::{fit_logistic, pooled_start};
use super::optimize::{minimize_bfgs, newton_polish, numerical_hessian, BfgsOptions, Minimum};
use crate::error::{Error, Result};
use crate::math::{logistic, logit};

/// Maximum-likelihood estimates of a random-intercept binomial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Names of the fixed-effect columns, aligned with `beta`.
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    /// Random-intercept variance σ²_u.
    pub sigma2: f64,
    /// Covariance of `(beta…, sigma2)`, row-major, from the inverse observed information.
    /// The variance row/column is zero when σ² is fixed or at the boundary.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub converged: bool,
    /// σ² = 0 was selected by the boundary check.
    pub at_boundary: bool,
    pub sigma2_fixed: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub quadrature_nodes: usize,
    pub n_clusters: usize,
    pub n_papers: u64,
    pub design_rank: usize,
}

impl FitResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.covariance.len();
        DMatrix::from_fn(k, k, |i, j| self.covariance[i][j])
    }

    pub fn beta_se(&self, j: usize) -> f64 {
        self.covariance[j][j].max(0.0).sqrt()
    }

    pub fn sigma2_se(&self) -> f64 {
        let k = self.beta.len();
        self.covariance[k][k].max(0.0).sqrt()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Number of estimated parameters: fixed effects plus one variance.
    pub fn n_parameters(&self) -> usize {
        self.beta.len() + 1
    }
}

/// Posterior mode and standard error of one cluster's random intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EBEstimate {
    pub institution_id: String,
    pub u_mode: f64,
    pub u_se: f64,
}

fn to_vecs(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn invert_information(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = h
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("observed information is not positive definite".into()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

struct Candidate {
    minimum: Minimum,
    sigma2: f64,
}

/// Fits the model and also returns the marginal log-likelihood at every
/// accepted optimizer iterate of the selected start.
pub fn fit_model_traced(spec: &FitSpec) -> Result<(FitResult, Vec<f64>)> {
    if spec.clusters.len() < 2 {
        return Err(Error::Validation("at least two clusters are required".into()));
    }
    let p = spec.design.n_cols();
    let rank = spec.design.rank();
    if rank < p {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    let opts = &spec.options;
    let ml = MarginalLikelihood::new(spec);
    let bfgs = BfgsOptions {
        max_iterations: opts.max_iterations,
        gradient_tolerance: opts.tolerance,
        ..BfgsOptions::default()
    };
    let base = |beta: Vec<f64>, sigma2: f64, ll: f64| FitResult {
        columns: spec.design.columns.clone(),
        beta,
        sigma2,
        covariance: vec![vec![0.0; p + 1]; p + 1],
        log_likelihood: ll,
        converged: false,
        at_boundary: false,
        sigma2_fixed: opts.fixed_sigma2.is_some(),
        iterations: 0,
        gradient_norm: f64::NAN,
        quadrature_nodes: opts.quadrature_nodes,
        n_clusters: spec.clusters.len(),
        n_papers: spec.n_papers(),
        design_rank: rank,
    };

    if let Some(sigma2) = opts.fixed_sigma2 {
        let mut f = |x: &DVector<f64>| {
            ml.value_and_beta_gradient(x.as_slice(), sigma2)
                .map(|(v, g)| (-v, -g))
        };
        let m = minimize_bfgs(&mut f, pooled_start(spec), bfgs)?;
        let m = newton_polish(&mut f, m, opts.tolerance, 20)?;
        let mut result = base(m.x.iter().copied().collect(), sigma2, -m.value);
        result.iterations = m.iterations;
        result.gradient_norm = m.gradient_norm();
        result.converged = m.converged;
        let cov = invert_information(&numerical_hessian(&mut f, &m.x)?)?;
        for i in 0..p {
            for j in 0..p {
                result.covariance[i][j] = cov[(i, j)];
            }
        }
        if !result.converged {
            return Err(Error::NonConvergence {
                iterations: result.iterations,
                gradient_norm: result.gradient_norm,
                best: Box::new(result),
            });
        }
        let trace = m.trace.iter().map(|v| -v).collect();
        return Ok((result, trace));
    }

    let glm = fit_logistic(spec)?;
    let mut candidates: Vec<Candidate> = Vec::new();
    for &v in &opts.start_variances {
        let mut x0 = DVector::zeros(p + 1);
        x0.rows_mut(0, p).copy_from(&glm.beta);
        x0[p] = v.ln();
        let mut f = |x: &DVector<f64>| {
            ml.value_and_gradient(&x.as_slice()[..p], x[p])
                .map(|(v, g)| (-v, -g))
        };
        let Ok(m) = minimize_bfgs(&mut f, x0, bfgs) else { continue };
        let Ok(m) = newton_polish(&mut f, m, opts.tolerance, 20) else { continue };
        let sigma2 = m.x[p].exp();
        candidates.push(Candidate { minimum: m, sigma2 });
    }

    let best = candidates
        .into_iter()
        .filter(|c| c.minimum.value.is_finite())
        .min_by(|a, b| a.minimum.value.total_cmp(&b.minimum.value));

    let interior_wins = best.as_ref().is_some_and(|c| {
        -c.minimum.value > glm.log_likelihood + 1e-9 * glm.log_likelihood.abs().max(1.0)
            && c.sigma2 > 1e-10
    });

    if !interior_wins {
        // Boundary: σ² = 0 and the plain logistic fit is the ML estimate.
        let mut result = base(glm.beta.iter().copied().collect(), 0.0, glm.log_likelihood);
        let (_, g) = ml.value_and_beta_gradient(glm.beta.as_slice(), 0.0)?;
        result.at_boundary = true;
        result.iterations = glm.iterations;
        result.gradient_norm = g.norm();
        result.converged = glm.converged && g.norm() < opts.tolerance.max(1e-8);
        let cov = invert_information(&glm.information)?;
        for i in 0..p {
            for j in 0..p {
                result.covariance[i][j] = cov[(i, j)];
            }
        }
        if !result.converged {
            return Err(Error::NonConvergence {
                iterations: result.iterations,
                gradient_norm: result.gradient_norm,
                best: Box::new(result),
            });
        }
        return Ok((result, vec![glm.log_likelihood]));
    }

    let best = best.expect("interior candidate");
    let m = best.minimum;
    let mut result = base(m.x.as_slice()[..p].to_vec(), best.sigma2, -m.value);
    result.iterations = m.iterations;
    result.gradient_norm = m.gradient_norm();
    result.converged = m.converged;

    let mut f = |x: &DVector<f64>| {
        ml.value_and_gradient(&x.as_slice()[..p], x[p])
            .map(|(v, g)| (-v, -g))
    };
    let cov_log = invert_information(&numerical_hessian(&mut f, &m.x)?)?;
    // Delta method from log σ² to σ².
    let mut jac = DMatrix::<f64>::identity(p + 1, p + 1);
    jac[(p, p)] = best.sigma2;
    result.covariance = to_vecs(&(&jac * cov_log * &jac));

    if !result.converged {
        return Err(Error::NonConvergence {
            iterations: result.iterations,
            gradient_norm: result.gradient_norm,
            best: Box::new(result),
        });
    }
    let trace = m.trace.iter().map(|v| -v).collect();
    Ok((result, trace))
}

/// Maximum-likelihood fit over `(β, log σ²)` with multiple starts and a
/// boundary check against the σ² = 0 (plain logistic) solution.
pub fn fit_model(spec: &FitSpec) -> Result<FitResult> {
    fit_model_traced(spec).map(|(r, _)| r)
}

/// Linear predictor `Xβ` for every cluster.
pub fn linear_predictor(spec: &FitSpec, beta: &[f64]) -> DVector<f64> {
    &spec.design.matrix * DVector::from_column_slice(beta)
}

/// Empirical Bayes (posterior mode) random intercepts given a fitted model.
pub fn eb_estimates(spec: &FitSpec, fit: &FitResult) -> Result<Vec<EBEstimate>> {
    if !fit.converged {
        return Err(Error::Validation("empirical Bayes estimates need a converged fit".into()));
    }
    if fit.beta.len() != spec.design.n_cols() {
        return Err(Error::Validation("fit does not match the design".into()));
    }
    let eta = linear_predictor(spec, &fit.beta);
    spec.clusters
        .iter()
        .zip(eta.iter())
        .map(|(c, e)| {
            if fit.sigma2 == 0.0 {
                return Ok(EBEstimate {
                    institution_id: c.id.clone(),
                    u_mode: 0.0,
                    u_se: 0.0,
                });
            }
            let (u, neg_h) = cluster_mode(c.n_trials, c.n_success, *e, fit.sigma2)
                .ok_or_else(|| Error::numeric(&c.id, "posterior mode search failed"))?;
            let se = 1.0 / neg_h.sqrt();
            if !se.is_finite() || !(se > 0.0) {
                return Err(Error::numeric(&c.id, "non-finite posterior curvature"));
            }
            Ok(EBEstimate {
                institution_id: c.id.clone(),
                u_mode: u,
                u_se: se,
            })
        })
        .collect()
}

/// Empirical logit residual `logit(y/n) − η`; clusters with `y = 0` or
/// `y = n` use `(y + 0.5)/(n + 1)`.
pub fn raw_residual_logit(n_trials: u64, n_success: u64, eta: f64) -> f64 {
    let rate = if n_success == 0 || n_success == n_trials {
        (n_success as f64 + 0.5) / (n_trials as f64 + 1.0)
    } else {
        n_success as f64 / n_trials as f64
    };
    logit(rate) - eta
}

/// `logistic(β·x + u)`.
pub fn predict_probability(beta: &[f64], design_row: &[f64], u: f64) -> f64 {
    let eta: f64 = beta.iter().zip(design_row).map(|(b, x)| b * x).sum();
    logistic(eta + u)
}
