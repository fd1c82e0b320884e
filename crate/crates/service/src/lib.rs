//! Read-only HTTP API over an edition store.
//!
//! | route | body |
//! |---|---|
//! | `GET /api/editions` | list of [`EditionSummary`] |
//! | `GET /api/rankings?edition&subject&indicator&covariate` | stored ranking document, byte for byte |
//! | `GET /api/institutions/{id}?edition[&indicator][&covariate]` | [`InstitutionSummary`] |
//!
//! Edition-scoped responses carry the edition checksum as `ETag` and
//! `X-Edition-Checksum`; a matching `If-None-Match` yields `304`. Anything
//! outside `/api` is served from the optional static directory.

use std::path::PathBuf;

use axum::extract::{Path, Query, State};
use axum::http::header::{self, HeaderMap, HeaderName, HeaderValue};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use excellence_core::domain::{covariate_label, parse_covariate_label};
use excellence_core::inference::IntervalEstimate;
use excellence_core::persistence::{sha256_hex, Edition, ManifestEntry, Store};
use excellence_core::{Covariate, Error, Indicator, SubjectArea};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub const CHECKSUM_HEADER: &str = "x-edition-checksum";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub name: String,
    pub slug: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditionSummary {
    pub edition_id: String,
    pub publication_window: (i32, i32),
    pub citation_cutoff: String,
    pub created_at: u64,
    pub checksum: String,
    pub subjects: Vec<SubjectSummary>,
    pub indicators: Vec<Indicator>,
    /// Covariate labels, `none` for the unadjusted baseline.
    pub covariates: Vec<String>,
}

/// One subject's ranking entry for an institution, copied from the stored table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionRow {
    pub subject_area: SubjectArea,
    pub subject_slug: String,
    pub reference_probability: f64,
    pub n_institutions: usize,
    pub rank: usize,
    pub n_papers: u64,
    pub probability: f64,
    pub logit: f64,
    pub logit_se: f64,
    pub interval_goldstein: IntervalEstimate,
    pub interval_95: IntervalEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_rank: Option<i64>,
    pub significant_vs_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstitutionSummary {
    pub edition_id: String,
    pub institution_id: String,
    pub name: String,
    pub country: String,
    pub latitude: f64,
    pub longitude: f64,
    pub indicator: Indicator,
    pub covariate: Option<Covariate>,
    pub rows: Vec<InstitutionRow>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, body: json!({ "error": message.into() }) }
    }

    fn unknown_key(parameter: &str, value: &str, valid: Vec<String>) -> Self {
        let nearest = nearest(value, &valid);
        ApiError {
            status: StatusCode::NOT_FOUND,
            body: json!({
                "error": format!("unknown {parameter} `{value}`"),
                "parameter": parameter,
                "value": value,
                "nearest": nearest,
                "valid": valid,
            }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Usage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError { status, body: json!({ "error": e.to_string() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Up to three candidates closest to `value` by normalized edit distance.
fn nearest(value: &str, valid: &[String]) -> Vec<String> {
    let v = value.to_lowercase();
    let mut scored: Vec<(f64, &String)> = valid
        .iter()
        .map(|c| (strsim::normalized_levenshtein(&v, &c.to_lowercase()), c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(3).map(|(_, c)| c.clone()).collect()
}

#[derive(Clone)]
struct AppState {
    store: Store,
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": format!("worker failed: {e}") }),
    })?
}

pub fn router(store: Store, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::HEAD])
        .allow_headers(Any)
        .expose_headers([header::ETAG, HeaderName::from_static(CHECKSUM_HEADER)]);
    let api = Router::new()
        .route("/api/editions", get(editions))
        .route("/api/rankings", get(rankings))
        .route("/api/institutions/{id}", get(institution))
        .with_state(AppState { store });
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async {
            ApiError { status: StatusCode::NOT_FOUND, body: json!({ "error": "no such route" }) }
        }),
    };
    app.layer(cors)
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "serving");
    axum::serve(listener, app).await
}

fn summarize(entry: &ManifestEntry, edition: &Edition) -> EditionSummary {
    EditionSummary {
        edition_id: entry.edition_id.clone(),
        publication_window: entry.publication_window,
        citation_cutoff: edition.citation_cutoff.clone(),
        created_at: entry.created_at,
        checksum: entry.checksum.clone(),
        subjects: edition
            .subjects
            .iter()
            .map(|s| SubjectSummary { name: s.as_str().to_string(), slug: s.slug() })
            .collect(),
        indicators: edition.indicators.clone(),
        covariates: edition.covariates.iter().map(|c| covariate_label(*c).to_string()).collect(),
    }
}

async fn editions(State(state): State<AppState>) -> Result<Response, ApiError> {
    let summaries = blocking(move || {
        let manifest = state.store.manifest()?;
        manifest
            .editions
            .iter()
            .map(|e| Ok(summarize(e, &state.store.edition(&e.edition_id)?)))
            .collect::<Result<Vec<_>, ApiError>>()
    })
    .await?;
    let body = serde_json::to_vec(&summaries).map_err(Error::from)?;
    let etag = format!("\"{}\"", sha256_hex(&body));
    Ok(([(header::CONTENT_TYPE, "application/json".to_string()), (header::ETAG, etag)], body).into_response())
}

fn required<'a>(value: &'a Option<String>, name: &str) -> Result<&'a str, ApiError> {
    value.as_deref().ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`")))
}

fn resolve_edition(store: &Store, id: &str) -> Result<(ManifestEntry, Edition), ApiError> {
    let manifest = store.manifest()?;
    match manifest.editions.iter().find(|e| e.edition_id == id) {
        Some(entry) => Ok((entry.clone(), store.edition(id)?)),
        None => Err(ApiError::unknown_key(
            "edition",
            id,
            manifest.editions.iter().map(|e| e.edition_id.clone()).collect(),
        )),
    }
}

fn resolve_indicator(edition: &Edition, value: &str) -> Result<Indicator, ApiError> {
    value
        .parse::<Indicator>()
        .ok()
        .filter(|i| edition.indicators.contains(i))
        .ok_or_else(|| {
            ApiError::unknown_key("indicator", value, edition.indicators.iter().map(|i| i.to_string()).collect())
        })
}

fn resolve_covariate(edition: &Edition, value: &str) -> Result<Option<Covariate>, ApiError> {
    parse_covariate_label(value)
        .ok()
        .filter(|c| edition.covariates.contains(c))
        .ok_or_else(|| {
            ApiError::unknown_key(
                "covariate",
                value,
                edition.covariates.iter().map(|c| covariate_label(*c).to_string()).collect(),
            )
        })
}

fn resolve_subject(edition: &Edition, value: &str) -> Result<SubjectArea, ApiError> {
    edition.subject_by_key(value).cloned().ok_or_else(|| {
        ApiError::unknown_key("subject", value, edition.subjects.iter().map(|s| s.slug()).collect())
    })
}

fn checksum_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"))
}

fn edition_response(entry: &ManifestEntry, headers: &HeaderMap, body: Vec<u8>) -> Response {
    let etag = format!("\"{}\"", entry.checksum);
    let mut out = HeaderMap::new();
    out.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    out.insert(header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=3600"));
    if let Ok(v) = HeaderValue::from_str(&entry.checksum) {
        out.insert(HeaderName::from_static(CHECKSUM_HEADER), v);
    }
    if let Ok(v) = HeaderValue::from_str(&etag) {
        out.insert(header::ETAG, v);
    }
    if checksum_matches(headers, &etag) {
        return (StatusCode::NOT_MODIFIED, out).into_response();
    }
    (out, body).into_response()
}

#[derive(Debug, Deserialize)]
struct RankingQuery {
    edition: Option<String>,
    subject: Option<String>,
    indicator: Option<String>,
    covariate: Option<String>,
}

async fn rankings(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<RankingQuery>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (entry, edition) = resolve_edition(&state.store, required(&q.edition, "edition")?)?;
        let subject = resolve_subject(&edition, required(&q.subject, "subject")?)?;
        let indicator = resolve_indicator(&edition, required(&q.indicator, "indicator")?)?;
        let covariate = resolve_covariate(&edition, required(&q.covariate, "covariate")?)?;
        let body = state.store.ranking_bytes(&entry.edition_id, &subject, indicator, covariate)?;
        Ok(edition_response(&entry, &headers, body))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct InstitutionQuery {
    edition: Option<String>,
    indicator: Option<String>,
    covariate: Option<String>,
}

async fn institution(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<InstitutionQuery>,
) -> Result<Response, ApiError> {
    blocking(move || {
        let (entry, edition) = resolve_edition(&state.store, required(&q.edition, "edition")?)?;
        let indicator = resolve_indicator(&edition, q.indicator.as_deref().unwrap_or("best_paper"))?;
        let covariate = resolve_covariate(&edition, q.covariate.as_deref().unwrap_or("none"))?;
        let mut subjects = edition.subjects.clone();
        subjects.sort();
        let mut summary: Option<InstitutionSummary> = None;
        for subject in &subjects {
            let table = state.store.load_ranking(&entry.edition_id, subject, indicator, covariate)?;
            let Some(e) = table.entry(&id) else { continue };
            let s = summary.get_or_insert_with(|| InstitutionSummary {
                edition_id: entry.edition_id.clone(),
                institution_id: e.institution_id.clone(),
                name: e.name.clone(),
                country: e.country.clone(),
                latitude: e.latitude,
                longitude: e.longitude,
                indicator,
                covariate,
                rows: Vec::new(),
            });
            s.rows.push(InstitutionRow {
                subject_area: subject.clone(),
                subject_slug: subject.slug(),
                reference_probability: table.reference_probability,
                n_institutions: table.entries.len(),
                rank: e.rank,
                n_papers: e.n_papers,
                probability: e.probability,
                logit: e.logit,
                logit_se: e.logit_se,
                interval_goldstein: e.interval_goldstein,
                interval_95: e.interval_95,
                delta_rank: e.delta_rank,
                significant_vs_mean: e.significant_vs_mean,
            });
        }
        let summary = summary.ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            body: json!({
                "error": format!("institution `{id}` not found in edition `{}`", entry.edition_id),
                "institution_id": id,
            }),
        })?;
        let body = serde_json::to_vec(&summary).map_err(Error::from)?;
        Ok(edition_response(&entry, &headers, body))
    })
    .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_prefers_small_edits() {
        let valid = vec!["chemistry".to_string(), "medicine".to_string(), "physics-and-astronomy".to_string()];
        assert_eq!(nearest("chemistri", &valid)[0], "chemistry");
        assert_eq!(nearest("Medicin", &valid)[0], "medicine");
        assert_eq!(nearest("x", &valid).len(), 3);
    }

    #[test]
    fn if_none_match_accepts_lists_and_wildcard() {
        let mut h = HeaderMap::new();
        h.insert(header::IF_NONE_MATCH, HeaderValue::from_static("\"a\", \"b\""));
        assert!(checksum_matches(&h, "\"b\""));
        assert!(!checksum_matches(&h, "\"c\""));
        h.insert(header::IF_NONE_MATCH, HeaderValue::from_static("*"));
        assert!(checksum_matches(&h, "\"c\""));
        assert!(!checksum_matches(&HeaderMap::new(), "\"c\""));
    }
}
