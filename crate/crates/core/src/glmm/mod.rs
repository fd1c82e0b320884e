//! Random-intercept binomial logistic mixed model.
//!
//! `logit pᵢ = xᵢᵀβ + uᵢ`, `yᵢ | uᵢ ~ Binomial(nᵢ, pᵢ)`, `uᵢ ~ N(0, σ²)`,
//! fitted by maximum likelihood with adaptive Gauss–Hermite quadrature.

mod design;
mod fit;
pub mod likelihood;
mod logistic;
pub mod optimize;
pub mod quadrature;

pub use design::{
    build_dummy_design, dummy_column, interaction_column, Cluster, Design, DummyDesign, FitOptions,
    FitSpec, INTERCEPT,
};
pub use fit::{
    eb_estimates, fit_model, fit_model_traced, linear_predictor, predict_probability,
    raw_residual_logit, EBEstimate, FitResult,
};
pub use likelihood::{marginal_loglik, MarginalLikelihood};
pub use logistic::{fit_logistic, LogisticFit};
