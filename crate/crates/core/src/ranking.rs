//! Ranking tables built from a fit and its Empirical Bayes estimates:
//! probabilities with intervals, vs-reference flags, Δ-rank, pairwise
//! comparisons and prediction curves.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Covariate, Indicator, SubjectArea};
use crate::error::{Error, Result};
use crate::glmm::{dummy_column, interaction_column, Cluster, EBEstimate, FitResult, INTERCEPT};
use crate::inference::{
    confidence_interval, IntervalEstimate, Scale, GOLDSTEIN_MULTIPLIER, NORMAL_95_MULTIPLIER,
};
use crate::ingest::{InstitutionRecord, Standardization};
use crate::math::logistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub institution_id: String,
    pub name: String,
    pub country: String,
    pub latitude: f64,
    pub longitude: f64,
    pub n_papers: u64,
    /// `β₀ + u`, the institution's linear predictor with covariates at zero.
    pub logit: f64,
    /// Posterior standard error of `u`.
    pub logit_se: f64,
    pub probability: f64,
    /// Probability-scale interval with multiplier 1.39.
    pub interval_goldstein: IntervalEstimate,
    /// Probability-scale interval with multiplier 1.96.
    pub interval_95: IntervalEstimate,
    pub rank: usize,
    /// `unadjusted rank − adjusted rank`; absent on unadjusted tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_rank: Option<i64>,
    /// The Goldstein interval excludes the reference probability.
    pub significant_vs_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub subject_area: SubjectArea,
    pub indicator: Indicator,
    /// `None` for the unadjusted model.
    pub covariate: Option<Covariate>,
    /// `logistic(β₀)`.
    pub reference_probability: f64,
    /// Sorted by rank.
    pub entries: Vec<RankingEntry>,
}

impl RankingTable {
    pub fn entry(&self, institution_id: &str) -> Option<&RankingEntry> {
        self.entries.iter().find(|e| e.institution_id == institution_id)
    }

    pub fn institution_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.institution_id.as_str()).collect()
    }

    /// Checks ranks, ordering, interval containment and the Δ-rank sum.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("{} / {}: {m}", self.subject_area, self.indicator)));
        if !(self.reference_probability > 0.0 && self.reference_probability < 1.0) {
            return bad(format!("reference probability {} outside (0,1)", self.reference_probability));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return bad(format!("entry {} has rank {} at position {}", e.institution_id, e.rank, i + 1));
            }
            if i > 0 && by_probability(&self.entries[i - 1], e) != Ordering::Less {
                return bad(format!("entry {} is out of order", e.institution_id));
            }
            for iv in [&e.interval_goldstein, &e.interval_95] {
                if !(iv.lower <= e.probability && e.probability <= iv.upper) {
                    return bad(format!("probability of {} outside its interval", e.institution_id));
                }
            }
        }
        let deltas: Vec<i64> = self.entries.iter().filter_map(|e| e.delta_rank).collect();
        if !deltas.is_empty() && (deltas.len() != self.entries.len() || deltas.iter().sum::<i64>() != 0) {
            return bad("Δ-rank values do not sum to zero over all entries".into());
        }
        Ok(())
    }
}

/// Descending probability, then ascending institution id.
fn by_probability(a: &RankingEntry, b: &RankingEntry) -> Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then_with(|| a.institution_id.cmp(&b.institution_id))
}

fn assign_ranks(entries: &mut [RankingEntry]) {
    entries.sort_by(by_probability);
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
}

/// Which table a ranking belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingKey {
    pub subject_area: SubjectArea,
    pub indicator: Indicator,
    pub covariate: Option<Covariate>,
}

/// Builds the table for one fitted model. `clusters` supplies paper counts,
/// `institutions` names and coordinates.
pub fn build_ranking(
    key: RankingKey,
    fit: &FitResult,
    clusters: &[Cluster],
    eb: &[EBEstimate],
    institutions: &BTreeMap<String, InstitutionRecord>,
) -> Result<RankingTable> {
    let b0 = fit
        .column_index(INTERCEPT)
        .map(|j| fit.beta[j])
        .ok_or_else(|| Error::Validation("fit has no intercept".into()))?;
    let eb_by_id: BTreeMap<&str, &EBEstimate> = eb.iter().map(|e| (e.institution_id.as_str(), e)).collect();
    let reference_probability = logistic(b0);
    let mut entries = Vec::with_capacity(clusters.len());
    for c in clusters {
        let est = eb_by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::Validation(format!("missing EB estimate for `{}`", c.id)))?;
        let inst = institutions
            .get(&c.id)
            .ok_or_else(|| Error::NotFound(format!("institution `{}` has no metadata", c.id)))?;
        let logit = b0 + est.u_mode;
        let goldstein = confidence_interval(logit, est.u_se, GOLDSTEIN_MULTIPLIER, Scale::Probability)?;
        let wide = confidence_interval(logit, est.u_se, NORMAL_95_MULTIPLIER, Scale::Probability)?;
        entries.push(RankingEntry {
            institution_id: c.id.clone(),
            name: inst.name.clone(),
            country: inst.country_code.clone(),
            latitude: inst.latitude,
            longitude: inst.longitude,
            n_papers: c.n_trials,
            logit,
            logit_se: est.u_se,
            probability: goldstein.center,
            significant_vs_mean: reference_probability < goldstein.lower
                || reference_probability > goldstein.upper,
            interval_goldstein: goldstein,
            interval_95: wide,
            rank: 0,
            delta_rank: None,
        });
    }
    if eb.len() != clusters.len() {
        return Err(Error::Validation("EB estimates do not match the clusters".into()));
    }
    assign_ranks(&mut entries);
    Ok(RankingTable {
        subject_area: key.subject_area,
        indicator: key.indicator,
        covariate: key.covariate,
        reference_probability,
        entries,
    })
}

/// Keeps only `ids` and re-ranks; used to align an unadjusted table with a
/// covariate model that dropped institutions lacking the covariate.
pub fn restrict(table: &RankingTable, ids: &BTreeSet<&str>) -> RankingTable {
    let mut out = table.clone();
    out.entries.retain(|e| ids.contains(e.institution_id.as_str()));
    assign_ranks(&mut out.entries);
    out
}

/// Annotates `adjusted` with `unadjusted rank − adjusted rank`.
pub fn delta_rank(adjusted: &RankingTable, unadjusted: &RankingTable) -> Result<RankingTable> {
    let a = adjusted.institution_ids();
    let u = unadjusted.institution_ids();
    if a != u {
        let only_adj: Vec<&str> = a.difference(&u).copied().collect();
        let only_unadj: Vec<&str> = u.difference(&a).copied().collect();
        return Err(Error::Validation(format!(
            "institution sets differ: only adjusted {only_adj:?}, only unadjusted {only_unadj:?}"
        )));
    }
    let base: BTreeMap<&str, usize> = unadjusted
        .entries
        .iter()
        .map(|e| (e.institution_id.as_str(), e.rank))
        .collect();
    let mut out = adjusted.clone();
    for e in &mut out.entries {
        e.delta_rank = Some(base[e.institution_id.as_str()] as i64 - e.rank as i64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseVerdict {
    AHigher,
    BHigher,
    Indistinguishable,
}

/// Goldstein-interval comparison on the logit scale; touching endpoints overlap.
pub fn pairwise_compare(a: &RankingEntry, b: &RankingEntry) -> PairwiseVerdict {
    let ia = logit_interval(a);
    let ib = logit_interval(b);
    if ia.lower > ib.upper {
        PairwiseVerdict::AHigher
    } else if ib.lower > ia.upper {
        PairwiseVerdict::BHigher
    } else {
        PairwiseVerdict::Indistinguishable
    }
}

fn logit_interval(e: &RankingEntry) -> IntervalEstimate {
    IntervalEstimate {
        center: e.logit,
        lower: e.logit - GOLDSTEIN_MULTIPLIER * e.logit_se,
        upper: e.logit + GOLDSTEIN_MULTIPLIER * e.logit_se,
        multiplier: GOLDSTEIN_MULTIPLIER,
        scale: Scale::Logit,
    }
}

/// Entries flagged as differing from the reference, in table order; Δ-ranks unchanged.
pub fn significance_filter(table: &RankingTable) -> RankingTable {
    let mut out = table.clone();
    out.entries.retain(|e| e.significant_vs_mean);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub raw_value: f64,
    pub subject: SubjectArea,
    pub predicted_rate: f64,
}

/// Predicted rate over a raw covariate grid for one subject of an overall
/// dummy-coded fit, without random effects.
pub fn predict_curve(
    fit: &FitResult,
    reference: &SubjectArea,
    covariate_name: &str,
    standardization: Standardization,
    grid: &[f64],
    subject: &SubjectArea,
) -> Result<Vec<CurvePoint>> {
    let coef = |name: &str| fit.column_index(name).map(|j| fit.beta[j]);
    let b0 = coef(INTERCEPT).ok_or_else(|| Error::Validation("fit has no intercept".into()))?;
    let b1 = coef(covariate_name)
        .ok_or_else(|| Error::Validation(format!("fit has no `{covariate_name}` column")))?;
    let (main, inter) = if subject == reference {
        (0.0, 0.0)
    } else {
        let main = coef(&dummy_column(subject))
            .ok_or_else(|| Error::NotFound(format!("subject `{subject}` is not in the fit")))?;
        (main, coef(&interaction_column(subject, covariate_name)).unwrap_or(0.0))
    };
    Ok(grid
        .iter()
        .map(|&raw| CurvePoint {
            raw_value: raw,
            subject: subject.clone(),
            predicted_rate: logistic(b0 + main + (b1 + inter) * standardization.apply(raw)),
        })
        .collect())
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn write_curves<W: Write>(sink: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["raw_value", "subject", "predicted_rate"])?;
    for p in points {
        w.write_record([p.raw_value.to_string(), p.subject.to_string(), p.predicted_rate.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<curves>", e))?;
    Ok(())
}
