use std::collections::{BTreeMap, BTreeSet};

use excellence_core::domain::{Indicator, SubjectArea};
use excellence_core::glmm::{Cluster, EBEstimate, FitResult, INTERCEPT};
use excellence_core::indicators::{assign_percentiles, JournalIndex};
use excellence_core::inference::{confidence_interval, icc, Scale};
use excellence_core::ingest::{InstitutionRecord, JournalRecord, PaperRecord};
use excellence_core::ranking::{
    build_ranking, delta_rank, pairwise_compare, significance_filter, RankingKey, RankingTable,
};
use proptest::prelude::*;

fn paper(id: usize, citations: u64, journal: usize) -> PaperRecord {
    PaperRecord {
        paper_id: format!("p{id:03}"),
        subject_area: SubjectArea::new("Chemistry"),
        pub_year: 2008,
        citations,
        journal_id: format!("j{journal}"),
        institution_ids: BTreeSet::from(["i".to_string()]),
        country_codes: BTreeSet::from(["DE".to_string()]),
    }
}

fn journals(k: usize) -> Vec<JournalRecord> {
    (0..k)
        .map(|j| JournalRecord {
            journal_id: format!("j{j}"),
            subject_area: SubjectArea::new("Chemistry"),
            sjr: Some(1.0 + j as f64),
            sjr2: Some(1.0 + (j % 3) as f64),
        })
        .collect()
}

fn fit(b0: f64) -> FitResult {
    FitResult {
        columns: vec![INTERCEPT.into()],
        beta: vec![b0],
        sigma2: 0.3,
        covariance: vec![vec![0.01, 0.0], vec![0.0, 0.001]],
        log_likelihood: -1.0,
        converged: true,
        at_boundary: false,
        sigma2_fixed: false,
        iterations: 1,
        gradient_norm: 0.0,
        quadrature_nodes: 8,
        n_clusters: 2,
        n_papers: 1000,
        design_rank: 1,
    }
}

fn table(b0: f64, eb: &[(f64, f64)]) -> RankingTable {
    let ids: Vec<String> = (0..eb.len()).map(|i| format!("i{i:03}")).collect();
    let clusters: Vec<Cluster> =
        ids.iter().map(|id| Cluster { id: id.clone(), n_trials: 600, n_success: 60 }).collect();
    let est: Vec<EBEstimate> = ids
        .iter()
        .zip(eb)
        .map(|(id, (u, se))| EBEstimate { institution_id: id.clone(), u_mode: *u, u_se: *se })
        .collect();
    let meta: BTreeMap<String, InstitutionRecord> = ids
        .iter()
        .map(|id| {
            (id.clone(), InstitutionRecord {
                institution_id: id.clone(),
                name: id.clone(),
                country_code: "DE".into(),
                latitude: 0.0,
                longitude: 0.0,
            })
        })
        .collect();
    let key = RankingKey { subject_area: SubjectArea::new("Chemistry"), indicator: Indicator::BestPaper, covariate: None };
    build_ranking(key, &fit(b0), &clusters, &est, &meta).unwrap()
}

fn eb_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-2.0f64..2.0, 0.01f64..0.5), 2..40)
}

proptest! {
    #[test]
    fn exactly_ten_percent_in_top_decile(tens in 1usize..20, seed in any::<u64>()) {
        let n = tens * 10;
        let papers: Vec<PaperRecord> = (0..n).map(|i| paper(i, (seed.wrapping_mul(i as u64 + 1) >> 7) % 50, i % 5)).collect();
        let refs: Vec<&PaperRecord> = papers.iter().collect();
        let out = assign_percentiles(&refs, &JournalIndex::new(&journals(5))).unwrap();
        prop_assert_eq!(out.iter().filter(|a| a.is_top_decile()).count(), n / 10);
        let mut ranks: Vec<usize> = out.iter().map(|a| a.rank).collect();
        ranks.sort();
        prop_assert_eq!(ranks, (1..=n).collect::<Vec<_>>());
    }

    #[test]
    fn percentiles_ignore_input_order(cites in prop::collection::vec(0u64..20, 1..60), perm_seed in any::<u64>()) {
        let papers: Vec<PaperRecord> = cites.iter().enumerate().map(|(i, c)| paper(i, *c, i % 4)).collect();
        let mut refs: Vec<&PaperRecord> = papers.iter().collect();
        let idx = JournalIndex::new(&journals(4));
        let a: BTreeMap<String, usize> = assign_percentiles(&refs, &idx).unwrap().into_iter().map(|p| (p.paper_id, p.rank)).collect();
        let len = refs.len();
        for i in (1..len).rev() {
            refs.swap(i, (perm_seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let b: BTreeMap<String, usize> = assign_percentiles(&refs, &idx).unwrap().into_iter().map(|p| (p.paper_id, p.rank)).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn more_citations_never_lower_percentile(cites in prop::collection::vec(0u64..30, 2..50)) {
        let papers: Vec<PaperRecord> = cites.iter().enumerate().map(|(i, c)| paper(i, *c, i % 4)).collect();
        let refs: Vec<&PaperRecord> = papers.iter().collect();
        let out = assign_percentiles(&refs, &JournalIndex::new(&journals(4))).unwrap();
        let pct: BTreeMap<&str, f64> = out.iter().map(|a| (a.paper_id.as_str(), a.percentile)).collect();
        for a in &papers {
            for b in &papers {
                if a.citations > b.citations {
                    prop_assert!(pct[a.paper_id.as_str()] > pct[b.paper_id.as_str()]);
                }
            }
        }
    }

    #[test]
    fn ranks_follow_probability(eb in eb_strategy(), b0 in -3.0f64..0.0) {
        let t = table(b0, &eb);
        t.validate().unwrap();
        for w in t.entries.windows(2) {
            prop_assert!(w[0].probability > w[1].probability
                || (w[0].probability == w[1].probability && w[0].institution_id < w[1].institution_id));
        }
    }

    #[test]
    fn goldstein_interval_nested_in_95(eb in eb_strategy(), b0 in -3.0f64..0.0) {
        let t = table(b0, &eb);
        for e in &t.entries {
            prop_assert!(e.interval_95.lower < e.interval_goldstein.lower);
            prop_assert!(e.interval_goldstein.upper < e.interval_95.upper);
            prop_assert!(e.interval_goldstein.lower < e.probability && e.probability < e.interval_goldstein.upper);
        }
    }

    #[test]
    fn delta_rank_sums_to_zero_and_is_antisymmetric(
        pair in prop::collection::vec(((-2.0f64..2.0, 0.01f64..0.5), -2.0f64..2.0), 2..40)
    ) {
        let a_eb: Vec<(f64, f64)> = pair.iter().map(|(e, _)| *e).collect();
        let b_eb: Vec<(f64, f64)> = pair.iter().map(|((_, se), u)| (*u, *se)).collect();
        let a = table(-2.0, &a_eb);
        let b = table(-2.0, &b_eb);
        let ab = delta_rank(&a, &b).unwrap();
        let ba = delta_rank(&b, &a).unwrap();
        prop_assert_eq!(ab.entries.iter().map(|e| e.delta_rank.unwrap()).sum::<i64>(), 0);
        for e in &ab.entries {
            prop_assert_eq!(e.delta_rank, ba.entry(&e.institution_id).unwrap().delta_rank.map(|d| -d));
        }
        let filtered = significance_filter(&ab);
        for e in &filtered.entries {
            prop_assert_eq!(e.delta_rank, ab.entry(&e.institution_id).unwrap().delta_rank);
        }
    }

    #[test]
    fn reference_shift_keeps_ranks_and_verdicts(eb in eb_strategy(), shift in prop::sample::select(vec![-1.0f64, -0.5, 0.25, 1.0])) {
        // Dyadic shifts and inputs keep β₀ + u exact, so ordering is compared without rounding noise.
        let eb: Vec<(f64, f64)> = eb.iter().map(|(u, se)| ((u * 1024.0).round() / 1024.0, *se)).collect();
        let moved: Vec<(f64, f64)> = eb.iter().map(|(u, se)| (u - shift, *se)).collect();
        let a = table(-2.0, &eb);
        let b = table(-2.0 + shift, &moved);
        let ra: Vec<(&str, usize)> = a.entries.iter().map(|e| (e.institution_id.as_str(), e.rank)).collect();
        let rb: Vec<(&str, usize)> = b.entries.iter().map(|e| (e.institution_id.as_str(), e.rank)).collect();
        prop_assert_eq!(ra, rb);
        for x in &a.entries {
            for y in &a.entries {
                let (bx, by) = (b.entry(&x.institution_id).unwrap(), b.entry(&y.institution_id).unwrap());
                prop_assert_eq!(pairwise_compare(x, y), pairwise_compare(bx, by));
            }
        }
    }

    #[test]
    fn icc_is_increasing_and_bounded(a in 0.0f64..50.0, d in 1e-6f64..10.0) {
        prop_assert!(icc(a) >= 0.0 && icc(a) < 1.0);
        prop_assert!(icc(a + d) > icc(a));
    }

    #[test]
    fn probability_interval_keeps_order(c in -6.0f64..6.0, se in 1e-3f64..2.0, m in 0.5f64..3.0) {
        let ci = confidence_interval(c, se, m, Scale::Probability).unwrap();
        prop_assert!(0.0 <= ci.lower && ci.lower < ci.center && ci.center < ci.upper && ci.upper <= 1.0);
    }
}
