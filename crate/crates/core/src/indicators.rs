//! Percentile ranks, top-decile and first-quartile-journal membership, and
//! per-institution success counts under full counting.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::SubjectArea;
use crate::error::{Error, Result};
use crate::ingest::{JournalRecord, PaperRecord};

/// Papers at or above this percentile belong to the top decile.
pub const TOP_DECILE_PERCENTILE: u64 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileAssignment {
    pub paper_id: String,
    /// `100 (k − 1) / n`
    pub percentile: f64,
    /// Ascending rank `k` in `1..=n`.
    pub rank: usize,
    pub population_size: usize,
}

impl PercentileAssignment {
    /// Exact integer form of `percentile >= 90`.
    pub fn is_top_decile(&self) -> bool {
        100 * (self.rank as u64 - 1) >= TOP_DECILE_PERCENTILE * self.population_size as u64
    }
}

/// First-quartile journals per subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JournalQuartileTable {
    pub first_quartile: BTreeMap<SubjectArea, BTreeSet<String>>,
}

impl JournalQuartileTable {
    pub fn contains(&self, subject: &SubjectArea, journal_id: &str) -> bool {
        self.first_quartile
            .get(subject)
            .is_some_and(|s| s.contains(journal_id))
    }
}

/// SJR2 lookup keyed by subject and journal, falling back to any subject's entry.
#[derive(Debug, Clone, Default)]
pub struct JournalIndex {
    by_subject: HashMap<(SubjectArea, String), Option<f64>>,
    any: HashMap<String, Option<f64>>,
}

impl JournalIndex {
    pub fn new(journals: &[JournalRecord]) -> Self {
        let mut idx = JournalIndex::default();
        for j in journals {
            idx.by_subject
                .insert((j.subject_area.clone(), j.journal_id.clone()), j.sjr2);
            let e = idx.any.entry(j.journal_id.clone()).or_insert(None);
            if e.is_none() {
                *e = j.sjr2;
            }
        }
        idx
    }

    /// Missing journals and missing values rank as the lowest prestige (0).
    pub fn sjr2(&self, subject: &SubjectArea, journal_id: &str) -> f64 {
        self.by_subject
            .get(&(subject.clone(), journal_id.to_string()))
            .copied()
            .flatten()
            .or_else(|| self.any.get(journal_id).copied().flatten())
            .unwrap_or(0.0)
    }
}

/// Identifies one paper inside its percentile population.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PaperKey {
    pub subject_area: SubjectArea,
    pub pub_year: i32,
    pub paper_id: String,
}

impl PaperKey {
    pub fn of(p: &PaperRecord) -> Self {
        PaperKey {
            subject_area: p.subject_area.clone(),
            pub_year: p.pub_year,
            paper_id: p.paper_id.clone(),
        }
    }
}

/// Per-institution binomial counts in one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstitutionSubjectCounts {
    pub institution_id: String,
    pub subject_area: SubjectArea,
    pub n_trials: u64,
    pub n_success_best_paper: u64,
    pub n_success_best_journal: u64,
}

impl InstitutionSubjectCounts {
    pub fn best_paper_rate(&self) -> f64 {
        self.n_success_best_paper as f64 / self.n_trials as f64
    }

    pub fn best_journal_rate(&self) -> f64 {
        self.n_success_best_journal as f64 / self.n_trials as f64
    }
}

/// Ranks one subject-year population: ascending citations; equal citations
/// place the higher-SJR2 journal higher; remaining ties by ascending paper id.
pub fn assign_percentiles(
    population: &[&PaperRecord],
    journals: &JournalIndex,
) -> Result<Vec<PercentileAssignment>> {
    if population.is_empty() {
        return Err(Error::UndefinedInput("empty percentile population".into()));
    }
    let mut keyed: Vec<(u64, f64, &str)> = population
        .iter()
        .map(|p| {
            (
                p.citations,
                journals.sjr2(&p.subject_area, &p.journal_id),
                p.paper_id.as_str(),
            )
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .then_with(|| a.2.cmp(b.2))
    });
    let n = keyed.len();
    Ok(keyed
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, id))| PercentileAssignment {
            paper_id: id.to_string(),
            percentile: 100.0 * i as f64 / n as f64,
            rank: i + 1,
            population_size: n,
        })
        .collect())
}

pub fn top_decile_members(assignments: &[PercentileAssignment]) -> BTreeSet<String> {
    assignments
        .iter()
        .filter(|a| a.is_top_decile())
        .map(|a| a.paper_id.clone())
        .collect()
}

/// Groups papers into subject-year populations.
pub fn populations(papers: &[PaperRecord]) -> BTreeMap<(SubjectArea, i32), Vec<&PaperRecord>> {
    let mut out: BTreeMap<(SubjectArea, i32), Vec<&PaperRecord>> = BTreeMap::new();
    for p in papers {
        out.entry((p.subject_area.clone(), p.pub_year))
            .or_default()
            .push(p);
    }
    out
}

/// Percentile assignments for every population, keyed by population.
pub fn assign_all_percentiles(
    papers: &[PaperRecord],
    journals: &JournalIndex,
) -> Result<BTreeMap<(SubjectArea, i32), Vec<PercentileAssignment>>> {
    let pops: Vec<_> = populations(papers).into_iter().collect();
    pops.into_par_iter()
        .map(|(key, pop)| assign_percentiles(&pop, journals).map(|a| (key, a)))
        .collect()
}

/// Keys of every top-decile paper across all populations.
pub fn top_decile_index(
    assignments: &BTreeMap<(SubjectArea, i32), Vec<PercentileAssignment>>,
) -> HashSet<PaperKey> {
    let mut out = HashSet::new();
    for ((subject, year), list) in assignments {
        for id in top_decile_members(list) {
            out.insert(PaperKey {
                subject_area: subject.clone(),
                pub_year: *year,
                paper_id: id,
            });
        }
    }
    out
}

/// Journals sorted by descending SJR (ties by ascending id); the top
/// `ceil(m / 4)` of the `m` journals with an SJR value form the first quartile.
pub fn build_journal_quartiles(journals: &[JournalRecord]) -> JournalQuartileTable {
    let mut by_subject: BTreeMap<&SubjectArea, Vec<(f64, &str)>> = BTreeMap::new();
    for j in journals {
        if let Some(sjr) = j.sjr {
            by_subject
                .entry(&j.subject_area)
                .or_default()
                .push((sjr, &j.journal_id));
        }
    }
    let mut table = JournalQuartileTable::default();
    for (subject, mut list) in by_subject {
        list.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.1.cmp(b.1))
        });
        let m = list.len();
        let size = m.div_ceil(4);
        table.first_quartile.insert(
            subject.clone(),
            list.into_iter().take(size).map(|(_, id)| id.to_string()).collect(),
        );
    }
    table
}

/// Full-counting aggregation for a single institution in one subject.
pub fn aggregate_institution_counts(
    papers: &[PaperRecord],
    top_decile: &HashSet<PaperKey>,
    quartiles: &JournalQuartileTable,
    institution_id: &str,
    subject: &SubjectArea,
) -> Result<InstitutionSubjectCounts> {
    let mut known = false;
    let mut counts = InstitutionSubjectCounts {
        institution_id: institution_id.to_string(),
        subject_area: subject.clone(),
        n_trials: 0,
        n_success_best_paper: 0,
        n_success_best_journal: 0,
    };
    for p in papers.iter().filter(|p| p.institution_ids.contains(institution_id)) {
        known = true;
        if &p.subject_area != subject {
            continue;
        }
        counts.n_trials += 1;
        if top_decile.contains(&PaperKey::of(p)) {
            counts.n_success_best_paper += 1;
        }
        if quartiles.contains(subject, &p.journal_id) {
            counts.n_success_best_journal += 1;
        }
    }
    if !known {
        return Err(Error::NotFound(format!(
            "institution `{institution_id}` has no attributed papers"
        )));
    }
    Ok(counts)
}

/// Counts for every (institution, subject) pair present, sorted by subject then institution.
pub fn aggregate_all(
    papers: &[PaperRecord],
    top_decile: &HashSet<PaperKey>,
    quartiles: &JournalQuartileTable,
) -> Vec<InstitutionSubjectCounts> {
    let mut acc: BTreeMap<(SubjectArea, String), (u64, u64, u64)> = BTreeMap::new();
    for p in papers {
        let top = top_decile.contains(&PaperKey::of(p)) as u64;
        let q1 = quartiles.contains(&p.subject_area, &p.journal_id) as u64;
        for inst in &p.institution_ids {
            let e = acc
                .entry((p.subject_area.clone(), inst.clone()))
                .or_default();
            e.0 += 1;
            e.1 += top;
            e.2 += q1;
        }
    }
    acc.into_iter()
        .map(|((subject_area, institution_id), (n, bp, bj))| InstitutionSubjectCounts {
            institution_id,
            subject_area,
            n_trials: n,
            n_success_best_paper: bp,
            n_success_best_journal: bj,
        })
        .collect()
}

/// Writes assignments as `subject,year,paper_id,rank,population_size,percentile,top_decile`.
pub fn write_assignments<W: Write>(
    assignments: &BTreeMap<(SubjectArea, i32), Vec<PercentileAssignment>>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "subject",
        "year",
        "paper_id",
        "rank",
        "population_size",
        "percentile",
        "top_decile",
    ])?;
    for ((subject, year), list) in assignments {
        for a in list {
            w.write_record([
                subject.as_str(),
                &year.to_string(),
                &a.paper_id,
                &a.rank.to_string(),
                &a.population_size.to_string(),
                &a.percentile.to_string(),
                if a.is_top_decile() { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<assignments>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper(id: &str, citations: u64, journal: &str, insts: &[&str]) -> PaperRecord {
        PaperRecord {
            paper_id: id.into(),
            subject_area: SubjectArea::new("Chemistry"),
            pub_year: 2008,
            citations,
            journal_id: journal.into(),
            institution_ids: insts.iter().map(|s| s.to_string()).collect(),
            country_codes: ["DE".to_string()].into(),
        }
    }

    fn journal(id: &str, sjr: Option<f64>, sjr2: Option<f64>) -> JournalRecord {
        JournalRecord {
            journal_id: id.into(),
            subject_area: SubjectArea::new("Chemistry"),
            sjr,
            sjr2,
        }
    }

    #[test]
    fn single_paper_gets_percentile_zero() {
        let p = paper("a", 5, "j", &["i"]);
        let a = assign_percentiles(&[&p], &JournalIndex::default()).unwrap();
        assert_eq!(a[0].percentile, 0.0);
        assert_eq!(a[0].rank, 1);
        assert!(!a[0].is_top_decile());
    }

    #[test]
    fn empty_population_errors() {
        assert!(assign_percentiles(&[], &JournalIndex::default()).is_err());
    }

    #[test]
    fn ten_distinct_papers_have_one_top_decile() {
        let papers: Vec<_> = (0..10).map(|i| paper(&format!("p{i}"), i * 3, "j", &["i"])).collect();
        let refs: Vec<_> = papers.iter().collect();
        let a = assign_percentiles(&refs, &JournalIndex::default()).unwrap();
        let top = top_decile_members(&a);
        assert_eq!(top, ["p9".to_string()].into());
        let p9 = a.iter().find(|x| x.paper_id == "p9").unwrap();
        assert_eq!(p9.percentile, 90.0);
    }

    #[test]
    fn twenty_distinct_papers_have_two_top_decile() {
        let papers: Vec<_> = (0..20).map(|i| paper(&format!("p{i:02}"), 100 - i, "j", &["i"])).collect();
        let refs: Vec<_> = papers.iter().collect();
        let top = top_decile_members(&assign_percentiles(&refs, &JournalIndex::default()).unwrap());
        assert_eq!(top, ["p00".to_string(), "p01".to_string()].into());
    }

    #[test]
    fn full_ties_resolved_by_id() {
        let papers: Vec<_> = (0..10).map(|i| paper(&format!("p{i}"), 7, "j", &["i"])).collect();
        let refs: Vec<_> = papers.iter().collect();
        let top = top_decile_members(&assign_percentiles(&refs, &JournalIndex::default()).unwrap());
        assert_eq!(top.len(), 1);
        assert!(top.contains("p9"));
        assert!(top_decile_members(&[]).is_empty());
    }

    #[test]
    fn sjr2_breaks_citation_ties() {
        let journals = JournalIndex::new(&[
            journal("hi", Some(1.0), Some(5.0)),
            journal("lo", Some(1.0), Some(0.5)),
            journal("none", Some(1.0), None),
        ]);
        let a = paper("a", 3, "hi", &["i"]);
        let b = paper("b", 3, "lo", &["i"]);
        let c = paper("c", 3, "none", &["i"]);
        let d = paper("d", 2, "hi", &["i"]);
        let out = assign_percentiles(&[&a, &b, &c, &d], &journals).unwrap();
        let rank = |id: &str| out.iter().find(|x| x.paper_id == id).unwrap().rank;
        assert_eq!(rank("d"), 1);
        assert_eq!(rank("c"), 2, "missing SJR2 ranks lowest among ties");
        assert_eq!(rank("b"), 3);
        assert_eq!(rank("a"), 4);
    }

    #[test]
    fn quartile_sizes() {
        let four: Vec<_> = (1..=4).map(|i| journal(&format!("j{i}"), Some(i as f64), None)).collect();
        let q = build_journal_quartiles(&four);
        assert_eq!(q.first_quartile[&SubjectArea::new("Chemistry")], ["j4".to_string()].into());

        let five: Vec<_> = (1..=5).map(|i| journal(&format!("j{i}"), Some(i as f64), None)).collect();
        assert_eq!(build_journal_quartiles(&five).first_quartile[&SubjectArea::new("Chemistry")].len(), 2);

        let one = vec![journal("solo", Some(0.1), None)];
        assert!(build_journal_quartiles(&one).contains(&SubjectArea::new("Chemistry"), "solo"));

        // Missing SJR is never in the quartile; SJR ties by id.
        let mixed = vec![
            journal("b", Some(2.0), None),
            journal("a", Some(2.0), None),
            journal("x", None, None),
        ];
        let q = build_journal_quartiles(&mixed);
        assert_eq!(q.first_quartile[&SubjectArea::new("Chemistry")], ["a".to_string()].into());
    }

    #[test]
    fn aggregation_counts() {
        let chem = SubjectArea::new("Chemistry");
        let mut papers = Vec::new();
        for i in 0..1000u64 {
            papers.push(paper(&format!("p{i:04}"), i, if i % 2 == 0 { "q1" } else { "other" }, &["inst", "partner"]));
        }
        let quartiles = build_journal_quartiles(&[
            journal("q1", Some(9.0), None),
            journal("other", Some(1.0), None),
            journal("x2", Some(0.5), None),
            journal("x3", Some(0.4), None),
        ]);
        let assignments = assign_all_percentiles(&papers, &JournalIndex::default()).unwrap();
        let top = top_decile_index(&assignments);
        // 150 top papers for `inst` would need a larger population; here every paper is shared
        // so `inst` holds exactly the population's 10%.
        let c = aggregate_institution_counts(&papers, &top, &quartiles, "inst", &chem).unwrap();
        assert_eq!(c.n_trials, 1000);
        assert_eq!(c.n_success_best_paper, 100);
        assert_eq!(c.n_success_best_journal, 500);

        let all = aggregate_all(&papers, &top, &quartiles);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0], c);

        assert!(matches!(
            aggregate_institution_counts(&papers, &top, &quartiles, "ghost", &chem),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn best_paper_rate_mean_case() {
        let chem = SubjectArea::new("Chemistry");
        // 1000 papers by `inst`, 150 of them in the top decile of a 1500-paper population.
        let mut papers = Vec::new();
        for i in 0..1500u64 {
            let insts: &[&str] = if !(850..1350).contains(&i) { &["inst"] } else { &["other"] };
            papers.push(paper(&format!("p{i:04}"), i, "j", insts));
        }
        let assignments = assign_all_percentiles(&papers, &JournalIndex::default()).unwrap();
        let top = top_decile_index(&assignments);
        assert_eq!(top.len(), 150);
        let q = build_journal_quartiles(&[journal("j", Some(1.0), None)]);
        let c = aggregate_institution_counts(&papers, &top, &q, "inst", &chem).unwrap();
        assert_eq!(c.n_trials, 1000);
        assert!((c.best_paper_rate() - 0.15).abs() < 1e-15);
        assert_eq!(c.best_journal_rate(), 1.0);

        let other = aggregate_institution_counts(&papers, &top, &q, "other", &chem).unwrap();
        assert_eq!(other.best_paper_rate(), 0.0);
    }

    #[test]
    fn audit_export_has_header_and_rows() {
        let papers: Vec<_> = (0..3).map(|i| paper(&format!("p{i}"), i, "j", &["i"])).collect();
        let a = assign_all_percentiles(&papers, &JournalIndex::default()).unwrap();
        let mut buf = Vec::new();
        write_assignments(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("subject,year,paper_id"));
    }
}
