//! End-to-end batch run: ingest → indicators → fits → rankings → report →
//! stored edition.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::domain::{covariate_label, Covariate, Indicator, SubjectArea};
use crate::error::{Error, Result};
use crate::glmm::{
    build_dummy_design, eb_estimates, fit_model, Cluster, Design, EBEstimate, FitOptions, FitResult, FitSpec,
};
use crate::indicators::{
    aggregate_all, assign_all_percentiles, build_journal_quartiles, top_decile_index, InstitutionSubjectCounts,
    JournalIndex, PercentileAssignment,
};
use crate::ingest::{
    build_subject_datasets, collaboration_by_institution, load_aggregated, load_country_covariates,
    load_institutions, load_journals, load_papers, CountryCovariates, ExclusionWarning, InstitutionRecord,
    SubjectDataset,
};
use crate::persistence::{Edition, EditionContent, ManifestEntry, Store, StoredFit};
use crate::ranking::{build_ranking, delta_rank, linear_grid, predict_curve, restrict, CurvePoint, RankingKey, RankingTable};
use crate::report::{covariate_correlations, model_comparison, EditionReport, ModelComparison};

/// Input files. Either the four paper-level files or `aggregated` plus
/// `institutions` and `countries`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub papers: Option<PathBuf>,
    pub journals: Option<PathBuf>,
    pub aggregated: Option<PathBuf>,
    pub institutions: PathBuf,
    pub countries: PathBuf,
}

fn default_indicators() -> Vec<String> {
    Indicator::ALL.iter().map(|i| i.as_str().to_string()).collect()
}

fn default_covariates() -> Vec<String> {
    Covariate::ALL.iter().map(|c| c.as_str().to_string()).collect()
}

fn default_nodes() -> usize {
    FitOptions::default().quadrature_nodes
}

fn default_tolerance() -> f64 {
    FitOptions::default().tolerance
}

fn default_max_iterations() -> usize {
    FitOptions::default().max_iterations
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub edition_id: String,
    pub publication_window: (i32, i32),
    #[serde(default)]
    pub citation_cutoff: String,
    pub inputs: InputConfig,
    #[serde(default = "default_indicators")]
    pub indicators: Vec<String>,
    #[serde(default = "default_covariates")]
    pub covariates: Vec<String>,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub threads: usize,
    /// Also fit the dummy-coded all-subject models used by the report and curves.
    #[serde(default = "default_true")]
    pub overall_models: bool,
    pub store: Option<PathBuf>,
}

/// Typed view of a config after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub indicators: Vec<Indicator>,
    pub covariates: Vec<Covariate>,
    pub options: FitOptions,
}

impl PipelineConfig {
    /// Config with every indicator and covariate and default fit options.
    pub fn new(edition_id: impl Into<String>, publication_window: (i32, i32), inputs: InputConfig) -> Self {
        PipelineConfig {
            edition_id: edition_id.into(),
            publication_window,
            citation_cutoff: String::new(),
            inputs,
            indicators: default_indicators(),
            covariates: default_covariates(),
            quadrature_nodes: default_nodes(),
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            threads: 0,
            overall_models: true,
            store: None,
        }
    }

    /// Parses TOML; relative input and store paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Usage(format!("invalid config: {e}")))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.inputs.papers, &mut cfg.inputs.journals, &mut cfg.inputs.aggregated, &mut cfg.store]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut cfg.inputs.institutions);
        fix(&mut cfg.inputs.countries);
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Checks names and options without touching any input file.
    pub fn plan(&self) -> Result<Plan> {
        let indicators = self
            .indicators
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Indicator>>>()?;
        let covariates = self
            .covariates
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Covariate>>>()?;
        if indicators.is_empty() {
            return Err(Error::Usage("at least one indicator is required".into()));
        }
        let unique_i: BTreeSet<_> = indicators.iter().collect();
        let unique_c: BTreeSet<_> = covariates.iter().collect();
        if unique_i.len() != indicators.len() || unique_c.len() != covariates.len() {
            return Err(Error::Usage("indicators and covariates must not repeat".into()));
        }
        let (a, b) = self.publication_window;
        if a > b {
            return Err(Error::Usage(format!("publication window {a}-{b} is reversed")));
        }
        if self.quadrature_nodes == 0 || self.quadrature_nodes > 128 {
            return Err(Error::Usage("quadrature_nodes must be in 1..=128".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Usage("tolerance must be positive".into()));
        }
        let paper_level = self.inputs.papers.is_some() || self.inputs.journals.is_some();
        match (paper_level, self.inputs.aggregated.is_some()) {
            (true, true) => return Err(Error::Usage("give either paper-level inputs or `aggregated`, not both".into())),
            (false, false) => return Err(Error::Usage("no paper-level or aggregated input configured".into())),
            (true, false) if self.inputs.papers.is_none() || self.inputs.journals.is_none() => {
                return Err(Error::Usage("paper-level input needs both `papers` and `journals`".into()))
            }
            (false, true) if covariates.contains(&Covariate::Collaboration) => {
                return Err(Error::Usage(
                    "the collaboration covariate needs paper-level input; remove it or supply papers".into(),
                ))
            }
            _ => {}
        }
        let options = FitOptions {
            quadrature_nodes: self.quadrature_nodes,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..FitOptions::default()
        };
        Ok(Plan { indicators, covariates, options })
    }
}

/// Per-institution counts and the side inputs needed to model them.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub counts: Vec<InstitutionSubjectCounts>,
    pub institutions: Vec<InstitutionRecord>,
    pub countries: Vec<CountryCovariates>,
    pub collaboration: Option<BTreeMap<String, f64>>,
    /// Present for paper-level input.
    pub percentiles: Option<BTreeMap<(SubjectArea, i32), Vec<PercentileAssignment>>>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn ingest_inputs(inputs: &InputConfig, window: (i32, i32)) -> Result<IngestOutput> {
    let institutions = load_institutions(open(&inputs.institutions)?).map_err(|e| e.context("institutions"))?;
    let countries = load_country_covariates(open(&inputs.countries)?).map_err(|e| e.context("countries"))?;
    if let Some(path) = &inputs.aggregated {
        let counts = load_aggregated(open(path)?).map_err(|e| e.context("aggregated counts"))?;
        return Ok(IngestOutput { counts, institutions, countries, collaboration: None, percentiles: None });
    }
    let papers_path = inputs.papers.as_ref().ok_or_else(|| Error::Usage("no papers file".into()))?;
    let journals_path = inputs.journals.as_ref().ok_or_else(|| Error::Usage("no journals file".into()))?;
    let papers = load_papers(open(papers_path)?).map_err(|e| e.context("papers"))?;
    if let Some(p) = papers.iter().find(|p| p.pub_year < window.0 || p.pub_year > window.1) {
        return Err(Error::Validation(format!(
            "paper `{}` from {} lies outside the publication window {}-{}",
            p.paper_id, p.pub_year, window.0, window.1
        )));
    }
    let journals = load_journals(open(journals_path)?).map_err(|e| e.context("journals"))?;
    info!(papers = papers.len(), journals = journals.len(), "loaded paper-level input");
    let index = JournalIndex::new(&journals);
    let percentiles = assign_all_percentiles(&papers, &index)?;
    let top = top_decile_index(&percentiles);
    let quartiles = build_journal_quartiles(&journals);
    let counts = aggregate_all(&papers, &top, &quartiles);
    Ok(IngestOutput {
        counts,
        institutions,
        countries,
        collaboration: Some(collaboration_by_institution(&papers)),
        percentiles: Some(percentiles),
    })
}

/// One fitted per-subject model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectModel {
    pub key: RankingKey,
    pub spec: FitSpec,
    pub fit: FitResult,
    pub eb: Vec<EBEstimate>,
}

pub fn subject_spec(ds: &SubjectDataset, covariate: Option<Covariate>, options: &FitOptions) -> Result<FitSpec> {
    let data = ds.model_data(covariate)?;
    let clusters: Vec<Cluster> = data
        .institution_ids
        .iter()
        .zip(data.n_trials.iter().zip(&data.n_success))
        .map(|(id, (n, y))| Cluster { id: id.clone(), n_trials: *n, n_success: *y })
        .collect();
    let design = match (&data.covariate, covariate) {
        (Some(x), Some(c)) => Design::with_covariate(c.as_str(), x)?,
        _ => Design::intercept_only(clusters.len()),
    };
    FitSpec::new(clusters, design, options.clone())
}

pub fn fit_subject_model(ds: &SubjectDataset, covariate: Option<Covariate>, options: &FitOptions) -> Result<SubjectModel> {
    let what = format!("{} / {} / {}", ds.subject_area, ds.indicator, covariate_label(covariate));
    let run = || {
        let spec = subject_spec(ds, covariate, options)?;
        let fit = fit_model(&spec)?;
        let eb = eb_estimates(&spec, &fit)?;
        Ok(SubjectModel {
            key: RankingKey { subject_area: ds.subject_area.clone(), indicator: ds.indicator, covariate },
            spec,
            fit,
            eb,
        })
    };
    run().map_err(|e: Error| e.context(what))
}

/// Dummy-coded model over all subjects of one indicator. Each
/// institution × subject pair is its own cluster.
pub fn fit_overall_model(
    datasets: &[SubjectDataset],
    covariate: Option<Covariate>,
    options: &FitOptions,
) -> Result<FitResult> {
    let mut clusters = Vec::new();
    let mut subjects = Vec::new();
    let mut x = Vec::new();
    for ds in datasets {
        let data = ds.model_data(covariate)?;
        for (i, id) in data.institution_ids.iter().enumerate() {
            clusters.push(Cluster {
                id: format!("{id}@{}", ds.subject_area.slug()),
                n_trials: data.n_trials[i],
                n_success: data.n_success[i],
            });
            subjects.push(ds.subject_area.clone());
            if let Some(col) = &data.covariate {
                x.push(col[i]);
            }
        }
    }
    let cov = covariate.map(|c| (c.as_str(), x.as_slice()));
    let dummy = build_dummy_design(clusters, &subjects, cov, options.clone())?;
    fit_model(&dummy.spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltEdition {
    pub content: EditionContent,
    pub warnings: Vec<ExclusionWarning>,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

/// Runs every stage except storing.
pub fn build_edition(config: &PipelineConfig) -> Result<BuiltEdition> {
    let plan = config.plan()?;
    let ingest = ingest_inputs(&config.inputs, config.publication_window)?;
    build_edition_from(config, &plan, &ingest)
}

pub fn build_edition_from(config: &PipelineConfig, plan: &Plan, ingest: &IngestOutput) -> Result<BuiltEdition> {
    let mut datasets: Vec<SubjectDataset> = Vec::new();
    let mut warnings = Vec::new();
    for &indicator in &plan.indicators {
        let built = build_subject_datasets(
            &ingest.counts,
            &ingest.institutions,
            &ingest.countries,
            ingest.collaboration.as_ref(),
            indicator,
        )?;
        if warnings.is_empty() {
            warnings = built.warnings;
        }
        datasets.extend(built.datasets);
    }
    for w in &warnings {
        warn!(institution = %w.institution_id, subject = %w.subject_area, "{}", w.reason);
    }
    let subjects: Vec<SubjectArea> = datasets
        .iter()
        .map(|d| d.subject_area.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.is_empty() {
        return Err(Error::Validation(
            "no subject area has enough institutions above the paper threshold".into(),
        ));
    }
    let covariates: Vec<Option<Covariate>> =
        std::iter::once(None).chain(plan.covariates.iter().copied().map(Some)).collect();
    info!(subjects = subjects.len(), models = datasets.len() * covariates.len(), "fitting");

    let jobs: Vec<(&SubjectDataset, Option<Covariate>)> = datasets
        .iter()
        .flat_map(|d| covariates.iter().map(move |c| (d, *c)))
        .collect();
    let overall_jobs: Vec<(Indicator, Option<Covariate>)> = if config.overall_models && subjects.len() > 1 {
        plan.indicators
            .iter()
            .flat_map(|i| covariates.iter().map(move |c| (*i, *c)))
            .collect()
    } else {
        Vec::new()
    };
    let pool = thread_pool(config.threads)?;
    let (models, overall) = pool.install(|| {
        let models: Vec<Result<SubjectModel>> = jobs
            .par_iter()
            .map(|(d, c)| fit_subject_model(d, *c, &plan.options))
            .collect();
        let overall: Vec<Result<FitResult>> = overall_jobs
            .par_iter()
            .map(|(i, c)| {
                let ds: Vec<SubjectDataset> = datasets.iter().filter(|d| d.indicator == *i).cloned().collect();
                fit_overall_model(&ds, *c, &plan.options)
                    .map_err(|e| e.context(format!("all subjects / {i} / {}", covariate_label(*c))))
            })
            .collect();
        (models, overall)
    });
    let models = models.into_iter().collect::<Result<Vec<_>>>()?;
    let overall = overall.into_iter().collect::<Result<Vec<_>>>()?;

    let inst_by_id: BTreeMap<String, InstitutionRecord> = ingest
        .institutions
        .iter()
        .map(|i| (i.institution_id.clone(), i.clone()))
        .collect();
    let mut tables: BTreeMap<(SubjectArea, Indicator), BTreeMap<Option<Covariate>, RankingTable>> = BTreeMap::new();
    for m in &models {
        let table = build_ranking(m.key.clone(), &m.fit, &m.spec.clusters, &m.eb, &inst_by_id)?;
        tables
            .entry((m.key.subject_area.clone(), m.key.indicator))
            .or_default()
            .insert(m.key.covariate, table);
    }
    let mut rankings = Vec::new();
    for group in tables.values() {
        let base = &group[&None];
        for (cov, table) in group {
            let table = if cov.is_some() {
                delta_rank(table, &restrict(base, &table.institution_ids()))?
            } else {
                table.clone()
            };
            table.validate()?;
            rankings.push(table);
        }
    }

    let mut fits: Vec<StoredFit> = models
        .iter()
        .map(|m| StoredFit {
            subject_area: Some(m.key.subject_area.clone()),
            indicator: m.key.indicator,
            covariate: m.key.covariate,
            fit: m.fit.clone(),
        })
        .collect();
    fits.extend(overall_jobs.iter().zip(&overall).map(|((i, c), f)| StoredFit {
        subject_area: None,
        indicator: *i,
        covariate: *c,
        fit: f.clone(),
    }));

    let report = edition_report(&fits, &datasets, ingest)?;
    let edition = Edition {
        edition_id: config.edition_id.clone(),
        publication_window: config.publication_window,
        citation_cutoff: config.citation_cutoff.clone(),
        subjects,
        indicators: plan.indicators.clone(),
        covariates,
    };
    Ok(BuiltEdition {
        content: EditionContent { edition, datasets, fits, rankings, report: Some(report) },
        warnings,
    })
}

fn edition_report(fits: &[StoredFit], datasets: &[SubjectDataset], ingest: &IngestOutput) -> Result<EditionReport> {
    type Models<'a> = Vec<(Option<Covariate>, &'a FitResult)>;
    let mut groups: BTreeMap<(Option<SubjectArea>, Indicator), Models> = BTreeMap::new();
    for f in fits {
        groups
            .entry((f.subject_area.clone(), f.indicator))
            .or_default()
            .push((f.covariate, &f.fit));
    }
    let mut overall: Vec<ModelComparison> = Vec::new();
    let mut per_subject = Vec::new();
    for ((subject, indicator), list) in groups {
        let cmp = model_comparison(subject.clone(), indicator, &list)?;
        if subject.is_none() {
            overall.push(cmp);
        } else {
            per_subject.push(cmp);
        }
    }
    let modelled: BTreeSet<&str> = datasets
        .iter()
        .flat_map(|d| d.observations.iter().map(|o| o.institution_id.as_str()))
        .collect();
    let countries_in_use: BTreeSet<&str> = ingest
        .institutions
        .iter()
        .filter(|i| modelled.contains(i.institution_id.as_str()))
        .map(|i| i.country_code.as_str())
        .collect();
    let countries: Vec<CountryCovariates> = ingest
        .countries
        .iter()
        .filter(|c| countries_in_use.contains(c.country_code.as_str()))
        .cloned()
        .collect();
    Ok(EditionReport { overall, per_subject, correlations: covariate_correlations(&countries).ok() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub entry: ManifestEntry,
    pub warnings: Vec<ExclusionWarning>,
}

/// Builds the edition and stores it; nothing is written if any stage fails.
pub fn run_pipeline(config: &PipelineConfig, store: &Store, created_at: u64) -> Result<PipelineOutcome> {
    let built = build_edition(config)?;
    let entry = store.store_edition(&built.content, created_at)?;
    info!(edition = %entry.edition_id, checksum = %entry.checksum, "edition stored");
    Ok(PipelineOutcome { entry, warnings: built.warnings })
}

/// Prediction curves of the overall covariate model over `points` raw values
/// spanning the observed covariate range, one curve per subject.
pub fn edition_curves(
    store: &Store,
    edition_id: &str,
    indicator: Indicator,
    covariate: Covariate,
    points: usize,
) -> Result<Vec<CurvePoint>> {
    let edition = store.edition(edition_id)?;
    let fit = store.load_fit(edition_id, None, indicator, Some(covariate))?.fit;
    let mut subjects = edition.subjects.clone();
    subjects.sort();
    let reference = subjects
        .first()
        .ok_or_else(|| Error::NotFound("edition has no subjects".into()))?
        .clone();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut standardization = None;
    for s in &subjects {
        let bytes = store.document(edition_id, &format!("datasets/{}/{indicator}.json", s.slug()))?;
        let ds: SubjectDataset = serde_json::from_slice(&bytes)?;
        standardization = standardization.or_else(|| ds.covariate_standardization.get(&covariate).copied());
        for o in &ds.observations {
            if let Some(v) = o.covariates.get(&covariate) {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    let st = standardization.ok_or_else(|| Error::NotFound(format!("no standardization for `{covariate}`")))?;
    let grid = linear_grid(lo, hi, points);
    let mut out = Vec::new();
    for s in &subjects {
        out.extend(predict_curve(&fit, &reference, covariate.as_str(), st, &grid, s)?);
    }
    Ok(out)
}
