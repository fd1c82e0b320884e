//! Model-comparison summaries (one column block per model M0…M4) and the
//! Pearson correlation matrix of the country-level covariates.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::domain::{Covariate, Indicator, SubjectArea};
use crate::error::{Error, Result};
use crate::glmm::FitResult;
use crate::inference::{
    coefficient_interval, deviance_bic, icc, joint_wald_test, r2_explained, variance_interval,
    wald_variance_test, JointTest, VarianceTest, NORMAL_95_MULTIPLIER, SIGNIFICANCE_LEVEL,
};
use crate::ingest::CountryCovariates;
use crate::math::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub test: VarianceTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    /// `M0` for the unadjusted model, `M1`… in covariate order.
    pub label: String,
    pub covariate: Option<Covariate>,
    pub n_clusters: usize,
    pub n_papers: u64,
    /// Intercept and covariate slope; subject dummies are summarized by `subject_test`.
    pub fixed_effects: Vec<CoefficientRow>,
    pub subject_test: Option<JointTest>,
    pub interaction_test: Option<JointTest>,
    pub random_intercept: VarianceRow,
    pub icc: f64,
    /// Explained share of the M0 variance; `None` when M0 has zero variance.
    pub r2: Option<f64>,
    pub deviance: f64,
    pub bic: f64,
    pub at_boundary: bool,
}

/// All models of one indicator, either for one subject or for the overall
/// dummy-coded design (`subject_area = None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub subject_area: Option<SubjectArea>,
    pub indicator: Indicator,
    pub models: Vec<ModelSummary>,
}

pub fn model_label(covariate: Option<Covariate>) -> String {
    match covariate {
        None => "M0".into(),
        Some(c) => format!("M{}", Covariate::ALL.iter().position(|x| *x == c).expect("known covariate") + 1),
    }
}

fn is_dummy(column: &str) -> bool {
    column.starts_with("subject[")
}

/// Summary of one fit; `null_sigma2` is the M0 variance used for R².
pub fn summarize(covariate: Option<Covariate>, fit: &FitResult, null_sigma2: f64) -> Result<ModelSummary> {
    let normal = Normal::standard();
    let mut fixed_effects = Vec::new();
    for (j, name) in fit.columns.iter().enumerate().filter(|(_, c)| !is_dummy(c)) {
        let ci = coefficient_interval(fit, j, NORMAL_95_MULTIPLIER)?;
        let se = fit.beta_se(j);
        let z = if se > 0.0 { fit.beta[j] / se } else { f64::NAN };
        fixed_effects.push(CoefficientRow {
            name: name.clone(),
            estimate: fit.beta[j],
            se,
            ci_lower: ci.lower,
            ci_upper: ci.upper,
            z,
            p_value: 2.0 * normal.sf(z.abs()),
        });
    }
    let dummies: Vec<usize> = fit
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| is_dummy(c) && !c.contains(':'))
        .map(|(j, _)| j)
        .collect();
    let interactions: Vec<usize> = fit
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| is_dummy(c) && c.contains(':'))
        .map(|(j, _)| j)
        .collect();
    let test = |idx: &[usize]| if idx.is_empty() { Ok(None) } else { joint_wald_test(fit, idx).map(Some) };
    let vi = variance_interval(fit, NORMAL_95_MULTIPLIER);
    let (deviance, bic) = deviance_bic(fit);
    Ok(ModelSummary {
        label: model_label(covariate),
        covariate,
        n_clusters: fit.n_clusters,
        n_papers: fit.n_papers,
        fixed_effects,
        subject_test: test(&dummies)?,
        interaction_test: test(&interactions)?,
        random_intercept: VarianceRow {
            estimate: fit.sigma2,
            se: fit.sigma2_se(),
            ci_lower: vi.lower,
            ci_upper: vi.upper,
            test: wald_variance_test(fit)?,
        },
        icc: icc(fit.sigma2),
        r2: r2_explained(null_sigma2, fit.sigma2).ok(),
        deviance,
        bic,
        at_boundary: fit.at_boundary,
    })
}

/// Builds the comparison from `(covariate, fit)` pairs; the `None` entry is M0.
pub fn model_comparison(
    subject_area: Option<SubjectArea>,
    indicator: Indicator,
    fits: &[(Option<Covariate>, &FitResult)],
) -> Result<ModelComparison> {
    let null = fits
        .iter()
        .find(|(c, _)| c.is_none())
        .map(|(_, f)| f.sigma2)
        .ok_or_else(|| Error::Validation("model comparison needs the unadjusted model".into()))?;
    let mut models = fits
        .iter()
        .map(|(c, f)| summarize(*c, f, null))
        .collect::<Result<Vec<_>>>()?;
    models.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(ModelComparison { subject_area, indicator, models })
}

fn mark(p: f64) -> &'static str {
    if p < SIGNIFICANCE_LEVEL {
        "*"
    } else {
        ""
    }
}

/// Tab-separated table: one row per statistic, three columns (Est, CL, CU)
/// per model. Significant estimates carry a trailing `*`.
pub fn write_comparison_tsv<W: Write>(mut out: W, cmp: &ModelComparison) -> Result<()> {
    let io = |e| Error::io("<report>", e);
    let scope = cmp.subject_area.as_ref().map_or("all subjects", |s| s.as_str());
    writeln!(out, "# {} / {}", scope, cmp.indicator).map_err(io)?;
    let mut header = vec!["row".to_string(), "parameter".to_string()];
    for m in &cmp.models {
        let name = m.covariate.map_or("", |c| c.description());
        for col in ["Est", "CL", "CU"] {
            header.push(format!("{} {name} {col}", m.label).replace("  ", " "));
        }
    }
    writeln!(out, "{}", header.join("\t")).map_err(io)?;

    let mut row = |label: &str, par: &str, cells: Vec<[String; 3]>| -> Result<()> {
        let mut line = vec![label.to_string(), par.to_string()];
        for c in cells {
            line.extend(c);
        }
        writeln!(out, "{}", line.join("\t")).map_err(io)
    };
    let blank = || [String::new(), String::new(), String::new()];
    let coef = |m: &ModelSummary, intercept: bool| {
        m.fixed_effects
            .iter()
            .find(|r| (r.name == crate::glmm::INTERCEPT) == intercept)
            .map_or_else(blank, |r| {
                [
                    format!("{:.4}{}", r.estimate, mark(r.p_value)),
                    format!("{:.4}", r.ci_lower),
                    format!("{:.4}", r.ci_upper),
                ]
            })
    };
    let ftest = |t: &Option<JointTest>| {
        t.as_ref().map_or_else(blank, |t| {
            [format!("F={:.2}{} ({}; {})", t.f, mark(t.p_value), t.df_num, t.df_den), String::new(), String::new()]
        })
    };
    let single = |v: String| [v, String::new(), String::new()];

    row("Intercept", "beta_0", cmp.models.iter().map(|m| coef(m, true)).collect())?;
    row("Covariate", "beta_1", cmp.models.iter().map(|m| coef(m, false)).collect())?;
    row("Subject", "F", cmp.models.iter().map(|m| ftest(&m.subject_test)).collect())?;
    row("Subject x Cov", "F", cmp.models.iter().map(|m| ftest(&m.interaction_test)).collect())?;
    row(
        "Intercept u_0j",
        "sigma2_u",
        cmp.models
            .iter()
            .map(|m| {
                let v = &m.random_intercept;
                [
                    format!("{:.4}{}", v.estimate, mark(v.test.p_value)),
                    format!("{:.4}", v.ci_lower),
                    format!("{:.4}", v.ci_upper),
                ]
            })
            .collect(),
    )?;
    row("ICC", "rho", cmp.models.iter().map(|m| single(format!("{:.4}", m.icc))).collect())?;
    row(
        "R2_u",
        "",
        cmp.models.iter().map(|m| single(m.r2.map_or("NA".into(), |r| format!("{r:.4}")))).collect(),
    )?;
    row("Deviance", "", cmp.models.iter().map(|m| single(format!("{:.1}", m.deviance))).collect())?;
    row("BIC", "", cmp.models.iter().map(|m| single(format!("{:.1}", m.bic))).collect())?;
    row("Clusters", "N", cmp.models.iter().map(|m| single(m.n_clusters.to_string())).collect())?;
    Ok(())
}

/// Lower-triangular Pearson correlations with two-sided p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    pub n: usize,
    /// Full symmetric matrix.
    pub r: Vec<Vec<f64>>,
    pub p_value: Vec<Vec<f64>>,
}

/// Correlations among corruption, residents and GDP per capita over `countries`.
pub fn covariate_correlations(countries: &[CountryCovariates]) -> Result<CorrelationMatrix> {
    let vars = [Covariate::Corruption, Covariate::Residents, Covariate::Gdp];
    let n = countries.len();
    if n < 3 {
        return Err(Error::UndefinedInput(format!("correlations need at least 3 countries, got {n}")));
    }
    let cols: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| countries.iter().map(|c| c.value(*v).expect("country-level")).collect())
        .collect();
    let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).map_err(|e| Error::DegenerateTest(e.to_string()))?;
    let k = vars.len();
    let mut r = vec![vec![1.0; k]; k];
    let mut p = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..i {
            let rij = pearson(&cols[i], &cols[j]);
            let p_ij = if rij.abs() >= 1.0 {
                0.0
            } else {
                let stat = rij * ((n - 2) as f64 / (1.0 - rij * rij)).sqrt();
                2.0 * t.sf(stat.abs())
            };
            r[i][j] = rij;
            r[j][i] = rij;
            p[i][j] = p_ij;
            p[j][i] = p_ij;
        }
    }
    Ok(CorrelationMatrix {
        variables: vars.iter().map(|v| v.description().to_string()).collect(),
        n,
        r,
        p_value: p,
    })
}

pub fn write_correlations_tsv<W: Write>(mut out: W, m: &CorrelationMatrix) -> Result<()> {
    let io = |e| Error::io("<correlations>", e);
    writeln!(out, "# Pearson correlations (N = {})", m.n).map_err(io)?;
    writeln!(out, "Variable\t{}", m.variables.join("\t")).map_err(io)?;
    for (i, v) in m.variables.iter().enumerate() {
        let cells: Vec<String> = (0..m.variables.len())
            .map(|j| match j.cmp(&i) {
                std::cmp::Ordering::Less => format!("{:.2}{}", m.r[i][j], mark(m.p_value[i][j])),
                std::cmp::Ordering::Equal => "1.00".into(),
                std::cmp::Ordering::Greater => String::new(),
            })
            .collect();
        writeln!(out, "{v}\t{}", cells.join("\t")).map_err(io)?;
    }
    Ok(())
}

/// Everything the report command emits for one edition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditionReport {
    pub overall: Vec<ModelComparison>,
    pub per_subject: Vec<ModelComparison>,
    pub correlations: Option<CorrelationMatrix>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::INTERCEPT;

    fn fit(sigma2: f64, with_cov: bool) -> FitResult {
        let mut columns = vec![INTERCEPT.to_string()];
        let mut beta = vec![-2.03];
        if with_cov {
            columns.push("gdp".into());
            beta.push(0.53);
        }
        columns.push("subject[Physics]".into());
        beta.push(0.2);
        let k = beta.len() + 1;
        let mut cov = vec![vec![0.0; k]; k];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 0.0004;
        }
        cov[k - 1][k - 1] = 0.015f64.powi(2);
        FitResult {
            design_rank: beta.len(),
            columns,
            beta,
            sigma2,
            covariance: cov,
            log_likelihood: -1000.0,
            converged: true,
            at_boundary: false,
            sigma2_fixed: false,
            iterations: 10,
            gradient_norm: 1e-9,
            quadrature_nodes: 8,
            n_clusters: 200,
            n_papers: 200_000,
        }
    }

    #[test]
    fn summary_fields() {
        let m0 = fit(0.50, false);
        let m4 = fit(0.28, true);
        let cmp = model_comparison(None, Indicator::BestPaper, &[(Some(Covariate::Gdp), &m4), (None, &m0)]).unwrap();
        assert_eq!(cmp.models[0].label, "M0");
        assert_eq!(cmp.models[1].label, "M4");
        assert_eq!(cmp.models[0].r2, Some(0.0));
        assert!((cmp.models[1].r2.unwrap() - 0.44).abs() < 1e-12);
        assert!((cmp.models[0].icc - 0.132).abs() < 1e-3);
        assert_eq!(cmp.models[1].fixed_effects.len(), 2);
        let f = cmp.models[1].subject_test.unwrap();
        assert!((f.f - 100.0).abs() < 1e-9);
        assert!(cmp.models[1].interaction_test.is_none());
        assert!(cmp.models[0].random_intercept.test.significant);

        let mut buf = Vec::new();
        write_comparison_tsv(&mut buf, &cmp).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("M4 Gross domestic product Est"));
        assert!(text.lines().any(|l| l.starts_with("ICC\trho\t0.1319")));
        assert!(model_comparison(None, Indicator::BestPaper, &[(Some(Covariate::Gdp), &m4)]).is_err());
    }

    #[test]
    fn correlations() {
        let countries: Vec<CountryCovariates> = (0..10)
            .map(|i| CountryCovariates {
                country_code: format!("C{i}"),
                corruption_index: 10.0 + 5.0 * i as f64,
                residents: 1.0 + ((i * 7) % 10) as f64,
                gdp_per_capita: 1000.0 + 2000.0 * i as f64,
            })
            .collect();
        let m = covariate_correlations(&countries).unwrap();
        assert!((m.r[2][0] - 1.0).abs() < 1e-12);
        assert_eq!(m.r[0][2], m.r[2][0]);
        assert!(m.p_value[2][0] < 0.05);
        let mut buf = Vec::new();
        write_correlations_tsv(&mut buf, &m).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("Gross domestic product\t1.00*"));
        assert!(covariate_correlations(&countries[..2]).is_err());
    }
}
