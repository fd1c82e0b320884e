//! Excellence indicators and covariate-adjusted rankings of research
//! institutions.
//!
//! The crate covers the whole batch side of the system:
//!
//! * [`ingest`] loads paper, journal, institution and country files and builds
//!   per-subject modelling datasets;
//! * [`indicators`] assigns citation percentiles and counts top-decile and
//!   first-quartile-journal papers per institution;
//! * [`glmm`] fits random-intercept binomial logistic models and computes
//!   Empirical Bayes estimates;
//! * [`inference`] and [`ranking`] turn fits into tests, intervals and ranking tables;
//! * [`persistence`] stores editions as JSON document trees;
//! * [`pipeline`] and [`simulate`] drive everything end to end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod glmm;
pub mod indicators;
pub mod inference;
pub mod ingest;
pub mod math;
pub mod persistence;
pub mod pipeline;
pub mod ranking;
pub mod report;
pub mod simulate;

pub use domain::{Covariate, Indicator, SubjectArea};
pub use error::{Error, Result};
pub use glmm::{EBEstimate, FitResult, FitSpec};
pub use ranking::{RankingEntry, RankingTable};
