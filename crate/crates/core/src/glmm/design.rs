use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::SubjectArea;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Binomial data for one cluster (institution).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub n_trials: u64,
    pub n_success: u64,
}

/// Fixed-effects design: one row per cluster, named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub columns: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    pub fn new(columns: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if columns.len() != matrix.ncols() {
            return Err(Error::Validation(format!(
                "{} column names for {} design columns",
                columns.len(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("design contains non-finite values".into()));
        }
        Ok(Design { columns, matrix })
    }

    pub fn intercept_only(n: usize) -> Self {
        Design {
            columns: vec![INTERCEPT.into()],
            matrix: DMatrix::from_element(n, 1, 1.0),
        }
    }

    /// Intercept plus one (already standardized) covariate column.
    pub fn with_covariate(name: &str, x: &[f64]) -> Result<Self> {
        let mut m = DMatrix::from_element(x.len(), 2, 1.0);
        m.set_column(1, &DVector::from_column_slice(x));
        Design::new(vec![INTERCEPT.into(), name.into()], m)
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numerical rank from the singular values.
    pub fn rank(&self) -> usize {
        let sv = self.matrix.clone().svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let tol = max * (self.n_rows().max(self.n_cols()) as f64) * f64::EPSILON * 16.0;
        sv.iter().filter(|s| **s > tol).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// 1 = Laplace approximation.
    pub quadrature_nodes: usize,
    /// Convergence threshold on the gradient norm of the marginal log-likelihood.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Hold σ² fixed instead of estimating it.
    pub fixed_sigma2: Option<f64>,
    /// Starting variances for the multi-start search.
    pub start_variances: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            quadrature_nodes: 8,
            tolerance: 1e-6,
            max_iterations: 500,
            fixed_sigma2: None,
            start_variances: vec![0.1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub clusters: Vec<Cluster>,
    pub design: Design,
    pub options: FitOptions,
}

impl FitSpec {
    pub fn new(clusters: Vec<Cluster>, design: Design, options: FitOptions) -> Result<Self> {
        if clusters.len() != design.n_rows() {
            return Err(Error::Validation(format!(
                "{} clusters but {} design rows",
                clusters.len(),
                design.n_rows()
            )));
        }
        if let Some(c) = clusters.iter().find(|c| c.n_success > c.n_trials || c.n_trials == 0) {
            return Err(Error::Validation(format!(
                "cluster `{}`: need 0 <= successes <= trials and trials > 0 (got {}/{})",
                c.id, c.n_success, c.n_trials
            )));
        }
        if options.quadrature_nodes == 0 {
            return Err(Error::Validation("quadrature_nodes must be positive".into()));
        }
        if !(options.tolerance > 0.0) {
            return Err(Error::Validation("tolerance must be positive".into()));
        }
        if let Some(s2) = options.fixed_sigma2 {
            if !(s2 >= 0.0 && s2.is_finite()) {
                return Err(Error::Validation("fixed_sigma2 must be finite and >= 0".into()));
            }
        }
        Ok(FitSpec {
            clusters,
            design,
            options,
        })
    }

    pub fn n_papers(&self) -> u64 {
        self.clusters.iter().map(|c| c.n_trials).sum()
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }
}

/// A dummy-coded multi-subject design together with its coding.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyDesign {
    pub spec: FitSpec,
    /// Alphabetically first subject; absorbed into the intercept.
    pub reference: SubjectArea,
    /// All subject levels in column order (reference first).
    pub levels: Vec<SubjectArea>,
    pub covariate_name: Option<String>,
}

pub fn dummy_column(subject: &SubjectArea) -> String {
    format!("subject[{}]", subject.as_str())
}

pub fn interaction_column(subject: &SubjectArea, covariate: &str) -> String {
    format!("subject[{}]:{covariate}", subject.as_str())
}

/// Reference-coded subject dummies and, with a covariate, the covariate main
/// effect and subject × covariate interactions. Column order:
/// intercept, covariate, dummies, interactions.
pub fn build_dummy_design(
    clusters: Vec<Cluster>,
    subjects: &[SubjectArea],
    covariate: Option<(&str, &[f64])>,
    options: FitOptions,
) -> Result<DummyDesign> {
    if subjects.len() != clusters.len() {
        return Err(Error::Validation("one subject label per cluster required".into()));
    }
    let mut levels: Vec<SubjectArea> = subjects.to_vec();
    levels.sort();
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::Validation(
            "dummy design needs at least two subject areas; fit the per-subject model instead".into(),
        ));
    }
    if let Some((_, x)) = covariate {
        if x.len() != clusters.len() {
            return Err(Error::Validation("one covariate value per cluster required".into()));
        }
    }
    let others = &levels[1..];
    let mut columns = vec![INTERCEPT.to_string()];
    if let Some((name, _)) = covariate {
        columns.push(name.to_string());
    }
    columns.extend(others.iter().map(dummy_column));
    if let Some((name, _)) = covariate {
        columns.extend(others.iter().map(|s| interaction_column(s, name)));
    }
    let n = clusters.len();
    let p = columns.len();
    let mut m = DMatrix::zeros(n, p);
    let dummy_offset = if covariate.is_some() { 2 } else { 1 };
    let inter_offset = dummy_offset + others.len();
    for (i, subject) in subjects.iter().enumerate() {
        m[(i, 0)] = 1.0;
        let x = covariate.map(|(_, x)| x[i]);
        if let Some(x) = x {
            m[(i, 1)] = x;
        }
        if let Some(k) = others.iter().position(|s| s == subject) {
            m[(i, dummy_offset + k)] = 1.0;
            if let Some(x) = x {
                m[(i, inter_offset + k)] = x;
            }
        }
    }
    let design = Design::new(columns, m)?;
    Ok(DummyDesign {
        spec: FitSpec::new(clusters, design, options)?,
        reference: levels[0].clone(),
        levels,
        covariate_name: covariate.map(|(n, _)| n.to_string()),
    })
}
