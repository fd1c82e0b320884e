use std::sync::OnceLock;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use excellence_core::persistence::Store;
use excellence_core::pipeline::{run_pipeline, PipelineConfig};
use excellence_core::simulate::{write_fixture, FixtureParams};
use excellence_core::{Indicator, RankingTable};
use excellence_service::{router, EditionSummary, InstitutionSummary, CHECKSUM_HEADER};
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    _dir: TempDir,
    store: Store,
    static_dir: std::path::PathBuf,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let params = FixtureParams::default();
        let files = write_fixture(dir.path(), &params).unwrap();
        let store = Store::open(dir.path().join("store"));
        run_pipeline(&PipelineConfig::new("2010", (2006, 2010), files.inputs()), &store, 10).unwrap();
        let mut narrow = PipelineConfig::new("2009", (2006, 2010), files.inputs());
        narrow.covariates = vec!["gdp".into()];
        narrow.indicators = vec!["best_paper".into()];
        narrow.overall_models = false;
        run_pipeline(&narrow, &store, 9).unwrap();
        let static_dir = dir.path().join("www");
        std::fs::create_dir(&static_dir).unwrap();
        std::fs::write(static_dir.join("index.html"), "<!doctype html><title>explorer</title>").unwrap();
        Fixture { _dir: dir, store, static_dir }
    })
}

fn app() -> Router {
    let f = fixture();
    router(f.store.clone(), Some(f.static_dir.clone()))
}

async fn get(app: Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let res = app.oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, headers, body)
}

#[tokio::test]
async fn editions_list_both_stored_editions() {
    let (status, headers, body) = get(app(), "/api/editions").await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers.contains_key(header::ETAG));
    let list: Vec<EditionSummary> = serde_json::from_slice(&body).unwrap();
    assert_eq!(list.len(), 2);
    let manifest = fixture().store.manifest().unwrap();
    for s in &list {
        let entry = manifest.editions.iter().find(|e| e.edition_id == s.edition_id).unwrap();
        assert_eq!(s.checksum, entry.checksum);
        let mut from_files: Vec<String> = entry
            .files
            .keys()
            .filter(|k| k.starts_with("rankings/"))
            .map(|k| k.rsplit('/').next().unwrap().trim_end_matches(".json").to_string())
            .collect();
        from_files.sort();
        from_files.dedup();
        let mut listed = s.covariates.clone();
        listed.sort();
        assert_eq!(listed, from_files, "edition {}", s.edition_id);
    }
    let narrow = list.iter().find(|s| s.edition_id == "2009").unwrap();
    assert_eq!(narrow.covariates, ["none", "gdp"]);
    assert_eq!(narrow.indicators, [Indicator::BestPaper]);
}

#[tokio::test]
async fn empty_store_lists_no_editions() {
    let dir = tempfile::tempdir().unwrap();
    let (status, _, body) = get(router(Store::open(dir.path()), None), "/api/editions").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"[]");
}

#[tokio::test]
async fn rankings_are_passed_through_byte_for_byte() {
    let f = fixture();
    let edition = f.store.edition("2010").unwrap();
    for subject in &edition.subjects {
        for cov in ["none", "gdp", "collaboration"] {
            let uri = format!("/api/rankings?edition=2010&subject={}&indicator=best_journal&covariate={cov}", subject.slug());
            let (status, headers, body) = get(app(), &uri).await;
            assert_eq!(status, StatusCode::OK, "{uri}");
            let stored = f
                .store
                .ranking_bytes("2010", subject, Indicator::BestJournal, excellence_core::domain::parse_covariate_label(cov).unwrap())
                .unwrap();
            assert_eq!(body, stored);
            let checksum = f.store.entry("2010").unwrap().checksum;
            assert_eq!(headers[CHECKSUM_HEADER], checksum.as_str());
            assert_eq!(headers[header::ETAG], format!("\"{checksum}\"").as_str());
            let table: RankingTable = serde_json::from_slice(&body).unwrap();
            assert!(table.entries.windows(2).all(|w| w[0].rank < w[1].rank));
            assert_eq!(table.entries.iter().all(|e| e.delta_rank.is_none()), cov == "none");
            for e in &table.entries {
                assert!(e.interval_95.lower < e.interval_goldstein.lower);
                assert!(e.interval_goldstein.upper < e.interval_95.upper);
            }
        }
    }
}

#[tokio::test]
async fn subject_accepts_display_name() {
    let (status, _, body) =
        get(app(), "/api/rankings?edition=2010&subject=Physics%20and%20Astronomy&indicator=best_paper&covariate=none").await;
    assert_eq!(status, StatusCode::OK);
    let table: RankingTable = serde_json::from_slice(&body).unwrap();
    assert_eq!(table.subject_area.as_str(), "Physics and Astronomy");
}

#[tokio::test]
async fn unknown_keys_get_404_with_nearest_candidates() {
    let cases = [
        ("edition=2011&subject=chemistry&indicator=best_paper&covariate=none", "edition", "2010"),
        ("edition=2010&subject=chemistri&indicator=best_paper&covariate=none", "subject", "chemistry"),
        ("edition=2010&subject=chemistry&indicator=best_papers&covariate=none", "indicator", "best_paper"),
        ("edition=2010&subject=chemistry&indicator=best_paper&covariate=gpd", "covariate", "gdp"),
        ("edition=2009&subject=chemistry&indicator=best_paper&covariate=residents", "covariate", "none"),
    ];
    for (query, parameter, first) in cases {
        let (status, _, body) = get(app(), &format!("/api/rankings?{query}")).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{query}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["parameter"], parameter);
        assert!(v["nearest"].as_array().unwrap().iter().any(|n| n == first), "{query}: {v}");
    }
}

#[tokio::test]
async fn missing_parameter_is_a_bad_request() {
    let (status, _, body) = get(app(), "/api/rankings?edition=2010&subject=chemistry").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8(body).unwrap().contains("indicator"));
}

#[tokio::test]
async fn matching_etag_yields_not_modified() {
    let checksum = fixture().store.entry("2010").unwrap().checksum;
    let req = Request::get("/api/rankings?edition=2010&subject=medicine&indicator=best_paper&covariate=gdp")
        .header(header::IF_NONE_MATCH, format!("\"{checksum}\""))
        .body(Body::empty())
        .unwrap();
    let res = app().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::NOT_MODIFIED);
}

#[tokio::test]
async fn institution_rows_equal_ranking_entries() {
    let f = fixture();
    let edition = f.store.edition("2010").unwrap();
    let table = f.store.load_ranking("2010", &edition.subjects[0], Indicator::BestPaper, None).unwrap();
    let id = &table.entries[0].institution_id;
    for cov in ["none", "corruption"] {
        let (status, headers, body) =
            get(app(), &format!("/api/institutions/{id}?edition=2010&indicator=best_paper&covariate={cov}")).await;
        assert_eq!(status, StatusCode::OK);
        assert!(headers.contains_key(CHECKSUM_HEADER));
        let summary: InstitutionSummary = serde_json::from_slice(&body).unwrap();
        assert_eq!(&summary.institution_id, id);
        let covariate = excellence_core::domain::parse_covariate_label(cov).unwrap();
        let mut present = 0;
        for subject in &edition.subjects {
            let t = f.store.load_ranking("2010", subject, Indicator::BestPaper, covariate).unwrap();
            if let Some(e) = t.entry(id) {
                present += 1;
                let row = summary.rows.iter().find(|r| &r.subject_area == subject).unwrap();
                assert_eq!(row.probability.to_bits(), e.probability.to_bits());
                assert_eq!(row.interval_goldstein, e.interval_goldstein);
                assert_eq!(row.interval_95, e.interval_95);
                assert_eq!(row.rank, e.rank);
                assert_eq!(row.n_papers, e.n_papers);
                assert_eq!(row.delta_rank, e.delta_rank);
                assert_eq!(row.reference_probability.to_bits(), t.reference_probability.to_bits());
                assert_eq!(row.n_institutions, t.entries.len());
            }
        }
        assert_eq!(summary.rows.len(), present);
    }
}

#[tokio::test]
async fn institution_in_every_subject_has_one_row_per_subject() {
    let f = fixture();
    let edition = f.store.edition("2010").unwrap();
    let tables: Vec<RankingTable> = edition
        .subjects
        .iter()
        .map(|s| f.store.load_ranking("2010", s, Indicator::BestPaper, None).unwrap())
        .collect();
    let id = tables[0]
        .entries
        .iter()
        .map(|e| &e.institution_id)
        .find(|id| tables.iter().all(|t| t.entry(id).is_some()))
        .unwrap();
    let (_, _, body) = get(app(), &format!("/api/institutions/{id}?edition=2010")).await;
    let summary: InstitutionSummary = serde_json::from_slice(&body).unwrap();
    assert_eq!(summary.rows.len(), 3);
}

#[tokio::test]
async fn unknown_institution_is_404() {
    let (status, _, _) = get(app(), "/api/institutions/NOPE?edition=2010").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_assets_and_cors() {
    let (status, _, body) = get(app(), "/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("explorer"));
    let req = Request::get("/api/editions").header(header::ORIGIN, "https://example.org").body(Body::empty()).unwrap();
    let res = app().oneshot(req).await.unwrap();
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
