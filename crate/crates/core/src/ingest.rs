//! Input loading, inclusion thresholds and per-subject modelling datasets.
//!
//! All input files are UTF-8 comma-separated text with a header row. Column
//! order is free; column names are fixed:
//!
//! | file          | columns                                                              |
//! |---------------|----------------------------------------------------------------------|
//! | papers        | `paper_id, subject, year, citations, journal_id, institutions, countries` |
//! | journals      | `journal_id, subject, sjr, sjr2`                                     |
//! | institutions  | `institution_id, name, country, lat, lon`                            |
//! | covariates    | `country, corruption, residents_millions, gdp_per_capita`            |
//! | aggregated    | `institution_id, subject, n_trials, n_success_bp, n_success_bj`      |
//!
//! `institutions` and `countries` in the paper file are `;`-separated lists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Covariate, Indicator, SubjectArea};
use crate::error::{Error, Result};
use crate::indicators::InstitutionSubjectCounts;
use crate::math;

/// Minimum attributed papers for an institution to enter a subject model.
pub const MIN_PAPERS: u64 = 500;
/// Minimum qualifying institutions for a subject to be modelled.
pub const MIN_INSTITUTIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub subject_area: SubjectArea,
    pub pub_year: i32,
    pub citations: u64,
    pub journal_id: String,
    pub institution_ids: BTreeSet<String>,
    pub country_codes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub journal_id: String,
    pub subject_area: SubjectArea,
    /// `None` when the journal has no SJR value; such journals never enter the first quartile.
    pub sjr: Option<f64>,
    /// `None` is ranked as the lowest prestige when breaking citation ties.
    pub sjr2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionRecord {
    pub institution_id: String,
    pub name: String,
    pub country_code: String,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryCovariates {
    pub country_code: String,
    pub corruption_index: f64,
    pub residents: f64,
    pub gdp_per_capita: f64,
}

impl CountryCovariates {
    pub fn value(&self, covariate: Covariate) -> Option<f64> {
        match covariate {
            Covariate::Collaboration => None,
            Covariate::Corruption => Some(self.corruption_index),
            Covariate::Residents => Some(self.residents),
            Covariate::Gdp => Some(self.gdp_per_capita),
        }
    }
}

/// One institution's binomial data in one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterObservation {
    pub institution_id: String,
    pub n_trials: u64,
    pub n_success: u64,
    /// Raw (unstandardized) covariate values; a missing key means the value is unavailable.
    pub covariates: BTreeMap<Covariate, f64>,
}

/// Mean and standard deviation used to z-transform one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDataset {
    pub subject_area: SubjectArea,
    pub indicator: Indicator,
    pub observations: Vec<ClusterObservation>,
    /// Shared across all subjects of an edition (pooled z-transform).
    pub covariate_standardization: BTreeMap<Covariate, Standardization>,
}

/// Model-ready columns for one (subject, indicator, covariate) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub institution_ids: Vec<String>,
    pub n_trials: Vec<u64>,
    pub n_success: Vec<u64>,
    /// Standardized covariate, present iff a covariate was requested.
    pub covariate: Option<Vec<f64>>,
}

impl SubjectDataset {
    /// Observations usable for `covariate`; institutions missing that covariate are dropped
    /// from this model only.
    pub fn model_data(&self, covariate: Option<Covariate>) -> Result<ModelData> {
        let std = match covariate {
            Some(c) => Some(*self.covariate_standardization.get(&c).ok_or_else(|| {
                Error::Validation(format!("covariate `{c}` is not available for this dataset"))
            })?),
            None => None,
        };
        let mut data = ModelData {
            institution_ids: Vec::new(),
            n_trials: Vec::new(),
            n_success: Vec::new(),
            covariate: covariate.map(|_| Vec::new()),
        };
        for obs in &self.observations {
            if let (Some(c), Some(s), Some(col)) = (covariate, std, data.covariate.as_mut()) {
                match obs.covariates.get(&c) {
                    Some(raw) => col.push(s.apply(*raw)),
                    None => continue,
                }
            }
            data.institution_ids.push(obs.institution_id.clone());
            data.n_trials.push(obs.n_trials);
            data.n_success.push(obs.n_success);
        }
        Ok(data)
    }
}

/// An institution left out of one or more covariate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionWarning {
    pub institution_id: String,
    pub subject_area: SubjectArea,
    pub missing: Vec<Covariate>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    pub datasets: Vec<SubjectDataset>,
    pub warnings: Vec<ExclusionWarning>,
}

/// Header-indexed reader over a delimited file.
struct Table<R: Read> {
    reader: csv::Reader<R>,
    columns: BTreeMap<String, usize>,
}

struct Row {
    record: csv::StringRecord,
    line: u64,
}

impl<R: Read> Table<R> {
    fn open(source: R, required: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .has_headers(true)
            .from_reader(source);
        let headers = reader.headers()?.clone();
        let columns: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        for name in required {
            if !columns.contains_key(*name) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing required column `{name}`"),
                });
            }
        }
        Ok(Table { reader, columns })
    }

    fn rows(&mut self) -> impl Iterator<Item = Result<Row>> + '_ {
        self.reader.records().map(|r| {
            let record = r.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            Ok(Row { record, line })
        })
    }

    fn index(&self, name: &str) -> usize {
        self.columns[name]
    }
}

impl Row {
    fn str(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, idx: usize, what: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(idx);
        raw.parse().map_err(|e| Error::Parse {
            line: self.line,
            message: format!("invalid {what} `{raw}`: {e}"),
        })
    }

    fn parse_opt_f64(&self, idx: usize, what: &str) -> Result<Option<f64>> {
        if self.str(idx).is_empty() {
            Ok(None)
        } else {
            self.parse(idx, what).map(Some)
        }
    }

    fn nonempty(&self, idx: usize, what: &str) -> Result<String> {
        let s = self.str(idx);
        if s.is_empty() {
            Err(Error::Parse {
                line: self.line,
                message: format!("empty {what}"),
            })
        } else {
            Ok(s.to_string())
        }
    }

    fn list(&self, idx: usize, what: &str) -> Result<BTreeSet<String>> {
        let set: BTreeSet<String> = self
            .str(idx)
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if set.is_empty() {
            return Err(Error::Parse {
                line: self.line,
                message: format!("{what} list is empty"),
            });
        }
        Ok(set)
    }
}

pub fn load_papers<R: Read>(source: R) -> Result<Vec<PaperRecord>> {
    let mut table = Table::open(
        source,
        &["paper_id", "subject", "year", "citations", "journal_id", "institutions", "countries"],
    )?;
    let [id, subject, year, citations, journal, insts, countries] = [
        "paper_id", "subject", "year", "citations", "journal_id", "institutions", "countries",
    ]
    .map(|c| table.index(c));
    let mut seen: HashSet<(String, String, i32)> = HashSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let cites: i64 = row.parse(citations, "citations")?;
        if cites < 0 {
            return Err(Error::Parse {
                line: row.line,
                message: format!("citations must be nonnegative, got {cites}"),
            });
        }
        let record = PaperRecord {
            paper_id: row.nonempty(id, "paper_id")?,
            subject_area: SubjectArea::new(row.nonempty(subject, "subject")?),
            pub_year: row.parse(year, "year")?,
            citations: cites as u64,
            journal_id: row.nonempty(journal, "journal_id")?,
            institution_ids: row.list(insts, "institutions")?,
            country_codes: row.list(countries, "countries")?,
        };
        let key = (
            record.paper_id.clone(),
            record.subject_area.0.clone(),
            record.pub_year,
        );
        if !seen.insert(key) {
            return Err(Error::Validation(format!(
                "duplicate paper_id `{}` in {} {} (line {})",
                record.paper_id, record.subject_area, record.pub_year, row.line
            )));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_journals<R: Read>(source: R) -> Result<Vec<JournalRecord>> {
    let mut table = Table::open(source, &["journal_id", "subject", "sjr", "sjr2"])?;
    let [id, subject, sjr, sjr2] = ["journal_id", "subject", "sjr", "sjr2"].map(|c| table.index(c));
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let rec = JournalRecord {
            journal_id: row.nonempty(id, "journal_id")?,
            subject_area: SubjectArea::new(row.nonempty(subject, "subject")?),
            sjr: row.parse_opt_f64(sjr, "sjr")?,
            sjr2: row.parse_opt_f64(sjr2, "sjr2")?,
        };
        for (name, v) in [("sjr", rec.sjr), ("sjr2", rec.sjr2)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "journal `{}` line {}: {name} must be positive, got {v}",
                        rec.journal_id, row.line
                    )));
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_institutions<R: Read>(source: R) -> Result<Vec<InstitutionRecord>> {
    let mut table = Table::open(source, &["institution_id", "name", "country", "lat", "lon"])?;
    let [id, name, country, lat, lon] =
        ["institution_id", "name", "country", "lat", "lon"].map(|c| table.index(c));
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let rec = InstitutionRecord {
            institution_id: row.nonempty(id, "institution_id")?,
            name: row.nonempty(name, "name")?,
            country_code: row.nonempty(country, "country")?,
            latitude: row.parse(lat, "lat")?,
            longitude: row.parse(lon, "lon")?,
        };
        if !(-90.0..=90.0).contains(&rec.latitude) || !(-180.0..=180.0).contains(&rec.longitude) {
            return Err(Error::Validation(format!(
                "institution `{}` line {}: coordinates ({}, {}) out of range",
                rec.institution_id, row.line, rec.latitude, rec.longitude
            )));
        }
        if !ids.insert(rec.institution_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate institution_id `{}`",
                rec.institution_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_country_covariates<R: Read>(source: R) -> Result<Vec<CountryCovariates>> {
    let cols = ["country", "corruption", "residents_millions", "gdp_per_capita"];
    let mut table = Table::open(source, &cols)?;
    let [country, corruption, residents, gdp] = cols.map(|c| table.index(c));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let rec = CountryCovariates {
            country_code: row.nonempty(country, "country")?,
            corruption_index: row.parse(corruption, "corruption")?,
            residents: row.parse(residents, "residents_millions")?,
            gdp_per_capita: row.parse(gdp, "gdp_per_capita")?,
        };
        if !(0.0..=100.0).contains(&rec.corruption_index) {
            return Err(Error::Validation(format!(
                "country `{}` line {}: corruption index {} outside [0, 100]",
                rec.country_code, row.line, rec.corruption_index
            )));
        }
        if !(rec.residents > 0.0) || !(rec.gdp_per_capita > 0.0) {
            return Err(Error::Validation(format!(
                "country `{}` line {}: residents and gdp_per_capita must be positive",
                rec.country_code, row.line
            )));
        }
        if !seen.insert(rec.country_code.clone()) {
            return Err(Error::Validation(format!(
                "duplicate country `{}`",
                rec.country_code
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads pre-aggregated `(n_trials, successes)` per institution and subject.
pub fn load_aggregated<R: Read>(source: R) -> Result<Vec<InstitutionSubjectCounts>> {
    let cols = ["institution_id", "subject", "n_trials", "n_success_bp", "n_success_bj"];
    let mut table = Table::open(source, &cols)?;
    let [id, subject, n, bp, bj] = cols.map(|c| table.index(c));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let rec = InstitutionSubjectCounts {
            institution_id: row.nonempty(id, "institution_id")?,
            subject_area: SubjectArea::new(row.nonempty(subject, "subject")?),
            n_trials: row.parse(n, "n_trials")?,
            n_success_best_paper: row.parse(bp, "n_success_bp")?,
            n_success_best_journal: row.parse(bj, "n_success_bj")?,
        };
        if rec.n_success_best_paper > rec.n_trials || rec.n_success_best_journal > rec.n_trials {
            return Err(Error::Validation(format!(
                "line {}: successes exceed n_trials for `{}`",
                row.line, rec.institution_id
            )));
        }
        if !seen.insert((rec.institution_id.clone(), rec.subject_area.clone())) {
            return Err(Error::Validation(format!(
                "duplicate row for `{}` in {}",
                rec.institution_id, rec.subject_area
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes counts in the format read by [`load_aggregated`].
pub fn write_aggregated_counts<W: Write>(sink: W, counts: &[InstitutionSubjectCounts]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["institution_id", "subject", "n_trials", "n_success_bp", "n_success_bj"])?;
    for c in counts {
        w.write_record([
            c.institution_id.clone(),
            c.subject_area.0.clone(),
            c.n_trials.to_string(),
            c.n_success_best_paper.to_string(),
            c.n_success_best_journal.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<counts>", e))?;
    Ok(())
}

/// Share of the institution's papers whose affiliations span more than one country.
pub fn compute_international_collaboration(papers: &[PaperRecord], institution_id: &str) -> Result<f64> {
    let mut total = 0u64;
    let mut multi = 0u64;
    for p in papers.iter().filter(|p| p.institution_ids.contains(institution_id)) {
        total += 1;
        if p.country_codes.len() > 1 {
            multi += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedInput(format!(
            "institution `{institution_id}` has no attributed papers"
        )));
    }
    Ok(multi as f64 / total as f64)
}

/// Collaboration share for every institution appearing in `papers`, in one pass.
pub fn collaboration_by_institution(papers: &[PaperRecord]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for p in papers {
        let international = p.country_codes.len() > 1;
        for inst in &p.institution_ids {
            let e = counts.entry(inst.as_str()).or_default();
            e.0 += 1;
            e.1 += international as u64;
        }
    }
    counts
        .into_iter()
        .map(|(k, (t, m))| (k.to_string(), m as f64 / t as f64))
        .collect()
}

/// Standardizes to mean 0 and sample standard deviation 1.
pub fn z_transform(values: &[f64]) -> Result<(Vec<f64>, Standardization)> {
    if values.len() < 2 {
        return Err(Error::DegenerateCovariate(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    let mean = math::mean(values);
    let sd = math::sample_sd(values);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateCovariate("zero variance".into()));
    }
    let s = Standardization { mean, sd };
    Ok((values.iter().map(|v| s.apply(*v)).collect(), s))
}

/// Applies the inclusion thresholds, joins covariates and computes the pooled
/// standardization. `collaboration` is optional because pre-aggregated input
/// cannot provide it.
pub fn build_subject_datasets(
    counts: &[InstitutionSubjectCounts],
    institutions: &[InstitutionRecord],
    covariates: &[CountryCovariates],
    collaboration: Option<&BTreeMap<String, f64>>,
    indicator: Indicator,
) -> Result<DatasetBuild> {
    let inst_by_id: BTreeMap<&str, &InstitutionRecord> = institutions
        .iter()
        .map(|i| (i.institution_id.as_str(), i))
        .collect();
    let cov_by_country: BTreeMap<&str, &CountryCovariates> = covariates
        .iter()
        .map(|c| (c.country_code.as_str(), c))
        .collect();

    let mut by_subject: BTreeMap<&SubjectArea, Vec<&InstitutionSubjectCounts>> = BTreeMap::new();
    for c in counts.iter().filter(|c| c.n_trials >= MIN_PAPERS) {
        by_subject.entry(&c.subject_area).or_default().push(c);
    }
    by_subject.retain(|_, v| v.len() >= MIN_INSTITUTIONS);

    let mut warnings = Vec::new();
    let mut subjects: Vec<(SubjectArea, Vec<ClusterObservation>)> = Vec::new();
    for (subject, mut rows) in by_subject {
        rows.sort_by(|a, b| a.institution_id.cmp(&b.institution_id));
        let mut obs = Vec::with_capacity(rows.len());
        for row in rows {
            let inst = inst_by_id.get(row.institution_id.as_str()).ok_or_else(|| {
                Error::Validation(format!(
                    "institution `{}` missing from the institution file",
                    row.institution_id
                ))
            })?;
            let mut values = BTreeMap::new();
            let mut missing = Vec::new();
            if let Some(collab) = collaboration {
                match collab.get(&row.institution_id) {
                    Some(v) => {
                        values.insert(Covariate::Collaboration, *v);
                    }
                    None => missing.push(Covariate::Collaboration),
                }
            }
            match cov_by_country.get(inst.country_code.as_str()) {
                Some(c) => {
                    for cov in Covariate::ALL.into_iter().filter(|c| c.is_country_level()) {
                        values.insert(cov, c.value(cov).expect("country-level covariate"));
                    }
                }
                None => missing.extend(Covariate::ALL.into_iter().filter(|c| c.is_country_level())),
            }
            if !missing.is_empty() {
                warnings.push(ExclusionWarning {
                    institution_id: row.institution_id.clone(),
                    subject_area: subject.clone(),
                    missing,
                    reason: format!(
                        "no covariate data for country `{}`; excluded from the affected covariate models",
                        inst.country_code
                    ),
                });
            }
            obs.push(ClusterObservation {
                institution_id: row.institution_id.clone(),
                n_trials: row.n_trials,
                n_success: match indicator {
                    Indicator::BestPaper => row.n_success_best_paper,
                    Indicator::BestJournal => row.n_success_best_journal,
                },
                covariates: values,
            });
        }
        subjects.push((subject.clone(), obs));
    }

    let mut standardization = BTreeMap::new();
    for cov in Covariate::ALL {
        let pooled: Vec<f64> = subjects
            .iter()
            .flat_map(|(_, obs)| obs.iter().filter_map(|o| o.covariates.get(&cov).copied()))
            .collect();
        if pooled.is_empty() {
            continue;
        }
        let (_, s) = z_transform(&pooled)
            .map_err(|e| Error::DegenerateCovariate(format!("covariate `{cov}`: {e}")))?;
        standardization.insert(cov, s);
    }

    let datasets = subjects
        .into_iter()
        .map(|(subject_area, observations)| SubjectDataset {
            subject_area,
            indicator,
            observations,
            covariate_standardization: standardization.clone(),
        })
        .collect();
    Ok(DatasetBuild { datasets, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPERS: &str = "paper_id,subject,year,citations,journal_id,institutions,countries
p1,Chemistry,2008,12,j1,i1;i2,DE;FR
p2,Chemistry,2008,0,j2,i1,DE
p3,Medicine,2009,3,j3,i3,US
";

    #[test]
    fn loads_well_formed_papers() {
        let papers = load_papers(PAPERS.as_bytes()).unwrap();
        assert_eq!(papers.len(), 3);
        assert_eq!(papers[0].institution_ids.len(), 2);
        assert_eq!(papers[0].citations, 12);
        assert_eq!(papers[2].subject_area, SubjectArea::new("Medicine"));
    }

    #[test]
    fn negative_citations_report_the_line() {
        let src = "paper_id,subject,year,citations,journal_id,institutions,countries
p1,Chemistry,2008,4,j1,i1,DE
p2,Chemistry,2008,-1,j1,i1,DE
";
        match load_papers(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_paper_id_is_named() {
        let src = "paper_id,subject,year,citations,journal_id,institutions,countries
p7,Chemistry,2008,4,j1,i1,DE
p7,Chemistry,2008,5,j1,i2,DE
";
        let err = load_papers(src.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("p7")), "{err}");
    }

    #[test]
    fn missing_column_is_a_parse_error() {
        let src = "paper_id,subject,year\np1,Chemistry,2008\n";
        assert!(matches!(load_papers(src.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn covariate_ranges() {
        let ok = "country,corruption,residents_millions,gdp_per_capita
VE,19,29.3,10000
BI,40,8.6,479
";
        let cov = load_country_covariates(ok.as_bytes()).unwrap();
        assert_eq!(cov[0].corruption_index, 19.0);
        assert_eq!(cov[1].gdp_per_capita, 479.0);

        let bad = "country,corruption,residents_millions,gdp_per_capita\nXX,101,1,1000\n";
        assert!(matches!(
            load_country_covariates(bad.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn institutions_validate_coordinates() {
        let bad = "institution_id,name,country,lat,lon\ni1,Somewhere,DE,91,10\n";
        assert!(matches!(load_institutions(bad.as_bytes()), Err(Error::Validation(_))));
        let ok = "institution_id,name,country,lat,lon\ni1,\"Uni, Town\",DE,48.1,11.6\n";
        assert_eq!(load_institutions(ok.as_bytes()).unwrap()[0].name, "Uni, Town");
    }

    #[test]
    fn journals_accept_missing_prestige() {
        let src = "journal_id,subject,sjr,sjr2\nj1,Chemistry,1.2,\nj2,Chemistry,,0.4\n";
        let j = load_journals(src.as_bytes()).unwrap();
        assert_eq!(j[0].sjr2, None);
        assert_eq!(j[1].sjr, None);
        let bad = "journal_id,subject,sjr,sjr2\nj1,Chemistry,0,1\n";
        assert!(load_journals(bad.as_bytes()).is_err());
    }

    fn paper(id: &str, inst: &str, countries: &[&str]) -> PaperRecord {
        PaperRecord {
            paper_id: id.into(),
            subject_area: SubjectArea::new("Chemistry"),
            pub_year: 2008,
            citations: 1,
            journal_id: "j".into(),
            institution_ids: [inst.to_string()].into(),
            country_codes: countries.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn international_collaboration_share() {
        let single: Vec<_> = (0..5).map(|i| paper(&format!("p{i}"), "a", &["DE"])).collect();
        assert_eq!(compute_international_collaboration(&single, "a").unwrap(), 0.0);

        let mixed: Vec<_> = (0..20)
            .map(|i| {
                let c: &[&str] = if i < 7 { &["DE", "US"] } else { &["DE"] };
                paper(&format!("p{i}"), "a", c)
            })
            .collect();
        assert!((compute_international_collaboration(&mixed, "a").unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(collaboration_by_institution(&mixed)["a"], 0.35);

        let all: Vec<_> = (0..3).map(|i| paper(&format!("p{i}"), "a", &["DE", "FR"])).collect();
        assert_eq!(compute_international_collaboration(&all, "a").unwrap(), 1.0);

        assert!(matches!(
            compute_international_collaboration(&all, "zzz"),
            Err(Error::UndefinedInput(_))
        ));
    }

    #[test]
    fn z_transform_examples() {
        let (z, s) = z_transform(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, 1.0);
        assert_eq!(z, vec![-1.0, 0.0, 1.0]);

        let (z2, _) = z_transform(&z).unwrap();
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(z_transform(&[5.0, 5.0, 5.0]), Err(Error::DegenerateCovariate(_))));
        assert!(matches!(z_transform(&[5.0]), Err(Error::DegenerateCovariate(_))));
    }

    fn counts(subject: &str, inst: &str, n: u64) -> InstitutionSubjectCounts {
        InstitutionSubjectCounts {
            institution_id: inst.into(),
            subject_area: SubjectArea::new(subject),
            n_trials: n,
            n_success_best_paper: n / 10,
            n_success_best_journal: n / 2,
        }
    }

    fn fixture(n_chem: usize, n_med: usize) -> (Vec<InstitutionSubjectCounts>, Vec<InstitutionRecord>, Vec<CountryCovariates>) {
        let mut c = Vec::new();
        let mut inst = Vec::new();
        for i in 0..n_chem.max(n_med) + 1 {
            let id = format!("i{i:03}");
            inst.push(InstitutionRecord {
                institution_id: id.clone(),
                name: format!("Institution {i}"),
                country_code: if i % 3 == 0 { "XX".into() } else if i % 2 == 0 { "DE".into() } else { "US".into() },
                latitude: 0.0,
                longitude: 0.0,
            });
            if i < n_chem {
                c.push(counts("Chemistry", &id, 500 + i as u64));
            }
            if i < n_med {
                c.push(counts("Medicine", &id, 600 + i as u64));
            }
        }
        // Below threshold.
        c.push(counts("Chemistry", &format!("i{:03}", n_chem), 499));
        let cov = vec![
            CountryCovariates { country_code: "DE".into(), corruption_index: 79.0, residents: 82.0, gdp_per_capita: 40000.0 },
            CountryCovariates { country_code: "US".into(), corruption_index: 71.0, residents: 311.0, gdp_per_capita: 48000.0 },
        ];
        (c, inst, cov)
    }

    #[test]
    fn thresholds_are_exact() {
        let (c, inst, cov) = fixture(50, 49);
        let build = build_subject_datasets(&c, &inst, &cov, None, Indicator::BestPaper).unwrap();
        assert_eq!(build.datasets.len(), 1, "Medicine with 49 institutions is dropped");
        let chem = &build.datasets[0];
        assert_eq!(chem.subject_area.as_str(), "Chemistry");
        assert_eq!(chem.observations.len(), 50, "the 499-paper institution is excluded");
        assert!(chem.observations.iter().all(|o| o.n_trials >= MIN_PAPERS));
    }

    #[test]
    fn missing_country_covariates_drop_per_model() {
        let (c, inst, cov) = fixture(60, 60);
        let build = build_subject_datasets(&c, &inst, &cov, None, Indicator::BestJournal).unwrap();
        assert_eq!(build.datasets.len(), 2);
        assert!(!build.warnings.is_empty());
        let chem = &build.datasets[0];
        let none = chem.model_data(None).unwrap();
        let gdp = chem.model_data(Some(Covariate::Gdp)).unwrap();
        assert_eq!(none.institution_ids.len(), 60);
        assert_eq!(gdp.institution_ids.len(), 40);
        assert!(none.covariate.is_none());
        assert_eq!(gdp.n_success[0], gdp.n_trials[0] / 2);
        assert!(chem.model_data(Some(Covariate::Collaboration)).is_err());

        // Pooled standardization: mean 0, sd 1 over all retained rows of all subjects.
        let pooled: Vec<f64> = build
            .datasets
            .iter()
            .flat_map(|d| d.model_data(Some(Covariate::Gdp)).unwrap().covariate.unwrap())
            .collect();
        assert!(math::mean(&pooled).abs() < 1e-9);
        assert!((math::sample_sd(&pooled) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_institution_is_an_error() {
        let (c, _, cov) = fixture(50, 0);
        assert!(matches!(
            build_subject_datasets(&c, &[], &cov, None, Indicator::BestPaper),
            Err(Error::Validation(_))
        ));
    }
}
