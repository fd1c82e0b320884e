//! Seeded synthetic data: aggregated binomial clusters drawn from the model,
//! and a paper-level fixture in the ingest file formats.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::slugify;
use crate::error::{Error, Result};
use crate::glmm::{Cluster, Design, FitOptions, FitSpec};
use crate::math::logistic;
use crate::pipeline::InputConfig;

/// Parameters of the aggregated cluster simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSimParams {
    pub n_clusters: usize,
    pub n_min: u64,
    pub n_max: u64,
    pub beta0: f64,
    /// Slope on a standard-normal covariate; 0 still draws the covariate.
    pub beta1: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for ClusterSimParams {
    fn default() -> Self {
        ClusterSimParams {
            n_clusters: 600,
            n_min: 500,
            n_max: 3000,
            beta0: -2.03,
            beta1: 0.53,
            sigma2: 0.28,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedClusters {
    pub clusters: Vec<Cluster>,
    /// Standardized covariate per cluster.
    pub x: Vec<f64>,
    /// True random intercepts.
    pub u: Vec<f64>,
}

impl SimulatedClusters {
    /// Fit specification with the covariate column, or intercept-only.
    pub fn spec(&self, with_covariate: bool, options: FitOptions) -> Result<FitSpec> {
        let design = if with_covariate {
            Design::with_covariate("x", &self.x)?
        } else {
            Design::intercept_only(self.clusters.len())
        };
        FitSpec::new(self.clusters.clone(), design, options)
    }
}

pub fn simulate_clusters(params: &ClusterSimParams) -> Result<SimulatedClusters> {
    if params.n_min == 0 || params.n_min > params.n_max {
        return Err(Error::Validation(format!(
            "invalid cluster size range [{}, {}]",
            params.n_min, params.n_max
        )));
    }
    if !(params.sigma2 >= 0.0) {
        return Err(Error::Validation("sigma2 must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let sd = params.sigma2.sqrt();
    let mut out = SimulatedClusters { clusters: Vec::new(), x: Vec::new(), u: Vec::new() };
    for i in 0..params.n_clusters {
        let n = rng.random_range(params.n_min..=params.n_max);
        let x: f64 = normal.sample(&mut rng);
        let u = sd * normal.sample(&mut rng);
        let p = logistic(params.beta0 + params.beta1 * x + u);
        let y = Binomial::new(n, p).expect("valid binomial").sample(&mut rng);
        out.clusters.push(Cluster { id: format!("c{i:04}"), n_trials: n, n_success: y });
        out.x.push(x);
        out.u.push(u);
    }
    Ok(out)
}

/// Writes clusters in the aggregated ingest format. Both indicator columns
/// carry the same successes.
pub fn write_aggregated<W: Write>(sink: W, subject: &str, clusters: &[Cluster]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["institution_id", "subject", "n_trials", "n_success_bp", "n_success_bj"])?;
    for c in clusters {
        let n = c.n_trials.to_string();
        let y = c.n_success.to_string();
        w.write_record([c.id.as_str(), subject, &n, &y, &y])?;
    }
    w.flush().map_err(|e| Error::io("<aggregated>", e))?;
    Ok(())
}

/// Parameters of the paper-level fixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub seed: u64,
    pub subjects: Vec<String>,
    pub n_institutions: usize,
    pub n_countries: usize,
    /// Range of lead-authored papers per institution and subject.
    pub papers_min: u64,
    pub papers_max: u64,
    pub first_year: i32,
    pub last_year: i32,
    pub journals_per_subject: usize,
    /// Probability that a paper has a second, co-authoring institution.
    pub coauthor_rate: f64,
    /// Countries left out of the covariate file, exercising per-model exclusion.
    pub countries_without_covariates: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            seed: 7,
            subjects: vec![
                "Chemistry".into(),
                "Medicine".into(),
                "Physics and Astronomy".into(),
            ],
            n_institutions: 56,
            n_countries: 12,
            papers_min: 500,
            papers_max: 700,
            first_year: 2006,
            last_year: 2010,
            journals_per_subject: 40,
            coauthor_rate: 0.3,
            countries_without_covariates: 1,
        }
    }
}

/// Paths of the files written by [`write_fixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFiles {
    pub papers: PathBuf,
    pub journals: PathBuf,
    pub institutions: PathBuf,
    pub countries: PathBuf,
}

impl FixtureFiles {
    pub fn in_dir(dir: &Path) -> Self {
        FixtureFiles {
            papers: dir.join("papers.csv"),
            journals: dir.join("journals.csv"),
            institutions: dir.join("institutions.csv"),
            countries: dir.join("countries.csv"),
        }
    }

    pub fn inputs(&self) -> InputConfig {
        InputConfig {
            papers: Some(self.papers.clone()),
            journals: Some(self.journals.clone()),
            aggregated: None,
            institutions: self.institutions.clone(),
            countries: self.countries.clone(),
        }
    }
}

struct Country {
    code: String,
    gdp: f64,
    corruption: f64,
    residents: f64,
    lat: f64,
    lon: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Generates a paper-level fixture and writes the four ingest files into `dir`.
///
/// Institution quality rises with country GDP per capita and with a latent
/// institution effect; quality drives both citations and journal choice.
pub fn write_fixture(dir: &Path, params: &FixtureParams) -> Result<FixtureFiles> {
    if params.subjects.is_empty() || params.n_institutions < 2 || params.n_countries == 0 {
        return Err(Error::Validation("fixture needs subjects, institutions and countries".into()));
    }
    if params.papers_min == 0 || params.papers_min > params.papers_max || params.first_year > params.last_year {
        return Err(Error::Validation("invalid fixture ranges".into()));
    }
    if params.countries_without_covariates >= params.n_countries {
        return Err(Error::Validation("at least one country needs covariates".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = FixtureFiles::in_dir(dir);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");

    let countries: Vec<Country> = (0..params.n_countries)
        .map(|i| {
            let a = (b'A' + (i / 26) as u8) as char;
            let b = (b'A' + (i % 26) as u8) as char;
            Country {
                code: format!("{a}{b}"),
                gdp: (10.0 + 0.6 * normal.sample(&mut rng)).exp().clamp(2_000.0, 120_000.0),
                corruption: rng.random_range(20.0..90.0),
                residents: (3.0 + 1.2 * normal.sample(&mut rng)).exp().max(0.5),
                lat: rng.random_range(-40.0..60.0),
                lon: rng.random_range(-120.0..140.0),
            }
        })
        .collect();
    let log_gdp: Vec<f64> = countries.iter().map(|c| c.gdp.ln()).collect();
    let gdp_mean = crate::math::mean(&log_gdp);

    let mut w = create(&files.countries)?;
    writeln!(w, "country,corruption,residents_millions,gdp_per_capita").map_err(|e| Error::io(&files.countries, e))?;
    for c in &countries[params.countries_without_covariates..] {
        writeln!(w, "{},{:.1},{:.3},{:.0}", c.code, c.corruption, c.residents, c.gdp)
            .map_err(|e| Error::io(&files.countries, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.countries, e))?;

    struct Inst {
        id: String,
        country: usize,
        quality: f64,
    }
    let insts: Vec<Inst> = (0..params.n_institutions)
        .map(|i| {
            let country = i % params.n_countries;
            Inst {
                id: format!("I{i:03}"),
                country,
                quality: 0.5 * (log_gdp[country] - gdp_mean) + 0.5 * normal.sample(&mut rng),
            }
        })
        .collect();
    let mut w = create(&files.institutions)?;
    writeln!(w, "institution_id,name,country,lat,lon").map_err(|e| Error::io(&files.institutions, e))?;
    for inst in &insts {
        let c = &countries[inst.country];
        let lat = (c.lat + rng.random_range(-2.0..2.0)).clamp(-90.0, 90.0);
        let lon = (c.lon + rng.random_range(-2.0..2.0)).clamp(-180.0, 180.0);
        writeln!(w, "{},Institute {} of {},{},{lat:.4},{lon:.4}", inst.id, inst.id, c.code, c.code)
            .map_err(|e| Error::io(&files.institutions, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.institutions, e))?;

    // Journals sorted by ascending prestige within each subject; the last one has no SJR.
    let mut jw = create(&files.journals)?;
    writeln!(jw, "journal_id,subject,sjr,sjr2").map_err(|e| Error::io(&files.journals, e))?;
    let mut journal_ids: Vec<Vec<String>> = Vec::new();
    for subject in &params.subjects {
        let mut sjr: Vec<f64> = (0..params.journals_per_subject)
            .map(|_| (0.8 * normal.sample(&mut rng)).exp())
            .collect();
        sjr.sort_by(f64::total_cmp);
        let mut ids = Vec::new();
        for (k, s) in sjr.iter().enumerate() {
            let id = format!("J-{}-{k:02}", slugify(subject));
            let missing = k == 0;
            let (a, b) = if missing {
                (String::new(), String::new())
            } else {
                (format!("{s:.3}"), format!("{:.3}", s * rng.random_range(0.8..1.2)))
            };
            writeln!(jw, "{id},{subject},{a},{b}").map_err(|e| Error::io(&files.journals, e))?;
            ids.push(id);
        }
        journal_ids.push(ids);
    }
    jw.flush().map_err(|e| Error::io(&files.journals, e))?;

    let mut pw = create(&files.papers)?;
    writeln!(pw, "paper_id,subject,year,citations,journal_id,institutions,countries")
        .map_err(|e| Error::io(&files.papers, e))?;
    let mut serial = 0u64;
    let n_journals = params.journals_per_subject;
    for (s, subject) in params.subjects.iter().enumerate() {
        let subject_shift = 0.3 * normal.sample(&mut rng);
        for inst in &insts {
            let n = rng.random_range(params.papers_min..=params.papers_max);
            for _ in 0..n {
                serial += 1;
                let year = rng.random_range(params.first_year..=params.last_year);
                let mut authors = BTreeSet::from([inst.id.clone()]);
                let mut codes = BTreeSet::from([countries[inst.country].code.clone()]);
                if rng.random_bool(params.coauthor_rate) {
                    let other = insts.choose(&mut rng).expect("institutions");
                    authors.insert(other.id.clone());
                    codes.insert(countries[other.country].code.clone());
                }
                let merit = inst.quality + subject_shift + normal.sample(&mut rng);
                let lambda = (1.5 + 0.6 * merit).exp();
                let cites = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u64;
                let slot = (logistic(0.8 * merit + 0.5 * normal.sample(&mut rng)) * n_journals as f64) as usize;
                let journal = &journal_ids[s][slot.min(n_journals - 1)];
                let insts_col = authors.into_iter().collect::<Vec<_>>().join(";");
                let codes_col = codes.into_iter().collect::<Vec<_>>().join(";");
                writeln!(pw, "P{serial:07},{subject},{year},{cites},{journal},{insts_col},{codes_col}")
                    .map_err(|e| Error::io(&files.papers, e))?;
            }
        }
    }
    pw.flush().map_err(|e| Error::io(&files.papers, e))?;
    Ok(files)
}
