//! Derived statistics on a fitted model: variance test, ICC, explained
//! variance, intervals, joint Wald F-tests and information criteria.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::glmm::FitResult;
use crate::math::{logistic, LOGISTIC_VARIANCE};

/// Multiplier giving non-overlap of two equal-precision intervals at α = 5%.
pub const GOLDSTEIN_MULTIPLIER: f64 = 1.39;
pub const NORMAL_95_MULTIPLIER: f64 = 1.96;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub multiplier: f64,
    pub scale: Scale,
}

impl IntervalEstimate {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// Closed-interval overlap.
    pub fn overlaps(&self, other: &IntervalEstimate) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// `center ± multiplier·se` on the logit scale, or the logistic image of
/// those three values on the probability scale. `center` is always a logit.
pub fn confidence_interval(center: f64, se: f64, multiplier: f64, scale: Scale) -> Result<IntervalEstimate> {
    if !(se >= 0.0) || !se.is_finite() {
        return Err(Error::Validation(format!("standard error must be >= 0, got {se}")));
    }
    if !(multiplier > 0.0) {
        return Err(Error::Validation(format!("multiplier must be positive, got {multiplier}")));
    }
    let (lo, hi) = (center - multiplier * se, center + multiplier * se);
    Ok(match scale {
        Scale::Logit => IntervalEstimate { center, lower: lo, upper: hi, multiplier, scale },
        Scale::Probability => IntervalEstimate {
            center: logistic(center),
            lower: logistic(lo),
            upper: logistic(hi),
            multiplier,
            scale,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceTest {
    pub z: f64,
    /// One-sided upper-tail p-value.
    pub p_value: f64,
    pub significant: bool,
}

/// One-sided Wald z-test of `σ² = 0` from an estimate and its standard error.
pub fn variance_wald_test(sigma2: f64, se: f64) -> Result<VarianceTest> {
    if sigma2 == 0.0 {
        return Ok(VarianceTest { z: 0.0, p_value: 0.5, significant: false });
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateTest(format!(
            "variance standard error is {se}; the Wald test is undefined"
        )));
    }
    let z = sigma2 / se;
    let p_value = standard_normal().sf(z);
    Ok(VarianceTest { z, p_value, significant: p_value < SIGNIFICANCE_LEVEL })
}

pub fn wald_variance_test(fit: &FitResult) -> Result<VarianceTest> {
    variance_wald_test(fit.sigma2, fit.sigma2_se())
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Intra-class correlation on the latent logistic scale, `σ² / (π²/3 + σ²)`.
pub fn icc(sigma2: f64) -> f64 {
    sigma2 / (LOGISTIC_VARIANCE + sigma2)
}

/// Share of the unadjusted random-intercept variance explained by a covariate.
/// Negative when the adjusted variance is larger; not clamped.
pub fn r2_explained(sigma2_null: f64, sigma2_cov: f64) -> Result<f64> {
    if !(sigma2_null > 0.0) {
        return Err(Error::UndefinedInput(format!(
            "explained variance needs a positive unadjusted variance, got {sigma2_null}"
        )));
    }
    Ok((sigma2_null - sigma2_cov) / sigma2_null)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointTest {
    pub chi2: f64,
    pub f: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
}

/// Joint Wald test of `β_j = 0` for all `j` in `indices`:
/// `F = bᵀV⁻¹b / q` on `(q, n_clusters − rank(X))` degrees of freedom.
pub fn joint_wald_test(fit: &FitResult, indices: &[usize]) -> Result<JointTest> {
    let q = indices.len();
    if q == 0 {
        return Err(Error::Validation("no coefficients selected".into()));
    }
    if let Some(bad) = indices.iter().find(|i| **i >= fit.beta.len()) {
        return Err(Error::Validation(format!("coefficient index {bad} out of range")));
    }
    let b = DVector::from_iterator(q, indices.iter().map(|i| fit.beta[*i]));
    let v = DMatrix::from_fn(q, q, |r, c| fit.covariance[indices[r]][indices[c]]);
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Singular("coefficient sub-covariance is not invertible".into()))?;
    let chi2 = b.dot(&chol.solve(&b));
    let f = chi2 / q as f64;
    let df_den = fit.n_clusters.saturating_sub(fit.design_rank);
    if df_den == 0 {
        return Err(Error::DegenerateTest("no denominator degrees of freedom".into()));
    }
    let p_value = if f == 0.0 {
        1.0
    } else {
        FisherSnedecor::new(q as f64, df_den as f64)
            .map_err(|e| Error::DegenerateTest(e.to_string()))?
            .sf(f)
    };
    Ok(JointTest { chi2, f, df_num: q, df_den, p_value })
}

/// `(−2 log L, −2 log L + k log(n_clusters))` with `k = |β| + 1`.
pub fn deviance_bic(fit: &FitResult) -> (f64, f64) {
    deviance_bic_from(fit.log_likelihood, fit.n_parameters(), fit.n_clusters)
}

pub fn deviance_bic_from(log_likelihood: f64, n_parameters: usize, n_clusters: usize) -> (f64, f64) {
    let deviance = -2.0 * log_likelihood;
    (deviance, deviance + n_parameters as f64 * (n_clusters as f64).ln())
}

/// Wald interval of one fixed effect on its own scale.
pub fn coefficient_interval(fit: &FitResult, j: usize, multiplier: f64) -> Result<IntervalEstimate> {
    confidence_interval(fit.beta[j], fit.beta_se(j), multiplier, Scale::Logit)
}

/// Symmetric Wald interval `σ² ± multiplier·se(σ²)`.
pub fn variance_interval(fit: &FitResult, multiplier: f64) -> IntervalEstimate {
    let se = fit.sigma2_se();
    IntervalEstimate {
        center: fit.sigma2,
        lower: fit.sigma2 - multiplier * se,
        upper: fit.sigma2 + multiplier * se,
        multiplier,
        scale: Scale::Logit,
    }
}
