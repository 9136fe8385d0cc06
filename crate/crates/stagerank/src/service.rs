//! HTTP front end of the search engine.
//!
//! | route                    | answer                                           |
//! |--------------------------|--------------------------------------------------|
//! | `GET /api/search`        | ranked, filtered, paginated results with facets  |
//! | `GET /api/article/{id}`  | one stored article                               |
//! | `GET /healthz`           | build and corpus version                         |
//! | `POST /api/reload`       | reloads corpus and indexes, swapping atomically  |
//!
//! Errors are JSON objects `{"error": "..."}` with a 4xx or 5xx status.
//! Search parameters: `query`, `year_from`, `year_to`, `journal`, `source`,
//! `author` (the last three repeatable), `page`, `page_size`, `preset`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use stagerank_core::corpus::generate_units;
use stagerank_core::engine::{
    EngineError, FacetCounts, SearchEngine, SearchRequest, SearchResponse,
};
use stagerank_core::rerank::Scorer;
use stagerank_core::{Article, Granularity, InvertedIndex};
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::formats::{corpus, snapshot};

/// Where the engine is loaded from.
#[derive(Debug, Clone)]
pub struct EngineSource {
    pub corpus: PathBuf,
    /// Directory with `paragraph.idx` and `abstract.idx`; indexes are built
    /// from the corpus when absent.
    pub indexes: Option<PathBuf>,
}

impl EngineSource {
    pub fn load(&self) -> Result<SearchEngine> {
        let articles = corpus::read_corpus(&self.corpus)?;
        let index = |g: Granularity| -> Result<InvertedIndex> {
            match &self.indexes {
                Some(dir) => snapshot::load(&dir.join(snapshot::file_name(g))),
                None => build_index(&articles, g),
            }
        };
        let paragraph = index(Granularity::Paragraph)?;
        let abstracts = index(Granularity::Abstract)?;
        SearchEngine::new(articles, paragraph, abstracts).map_err(Error::data)
    }
}

pub fn build_index(articles: &[Article], g: Granularity) -> Result<InvertedIndex> {
    let units: Vec<_> = articles.iter().flat_map(|a| generate_units(a, g)).collect();
    InvertedIndex::build(g, &units).map_err(Error::data)
}

/// Order-independent fingerprint of the article ids, shown by `/healthz`.
pub fn corpus_version(engine: &SearchEngine) -> String {
    let mut h = DefaultHasher::new();
    for a in engine.articles() {
        a.article_id.hash(&mut h);
    }
    format!("{}-{:016x}", engine.len(), h.finish())
}

pub struct AppState {
    engine: RwLock<Arc<SearchEngine>>,
    scorer: Arc<dyn Scorer + Send + Sync>,
    source: Option<EngineSource>,
}

impl AppState {
    pub fn new(
        engine: SearchEngine,
        scorer: Arc<dyn Scorer + Send + Sync>,
        source: Option<EngineSource>,
    ) -> Self {
        Self {
            engine: RwLock::new(Arc::new(engine)),
            scorer,
            source,
        }
    }

    /// The current snapshot; a request keeps using it even if a reload lands.
    pub fn engine(&self) -> Arc<SearchEngine> {
        self.engine.read().expect("engine lock").clone()
    }

    pub fn swap(&self, engine: SearchEngine) {
        *self.engine.write().expect("engine lock") = Arc::new(engine);
    }

    pub fn reload(&self) -> Result<usize> {
        let source = self
            .source
            .as_ref()
            .ok_or_else(|| Error::Usage("this server has no reload source".into()))?;
        let engine = source.load()?;
        let n = engine.len();
        self.swap(engine);
        Ok(n)
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, EngineError> {
        self.engine().search(req, self.scorer.as_ref())
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::EmptyQuery
            | EngineError::UnknownPreset(_)
            | EngineError::BadRequest(_) => StatusCode::BAD_REQUEST,
            EngineError::Inconsistent { .. } | EngineError::WrongGranularity { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self(status, e.to_string())
    }
}

fn bad_request(message: String) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, message)
}

/// Builds a request from query-string pairs; repeated filter keys accumulate.
pub fn parse_search_params(pairs: &[(String, String)]) -> Result<SearchRequest, String> {
    fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value
            .trim()
            .parse()
            .map_err(|_| format!("{key} must be a non-negative integer"))
    }
    let mut req = SearchRequest::default();
    for (key, value) in pairs {
        let value = value.as_str();
        match key.as_str() {
            "query" | "q" => req.query = value.to_string(),
            "year_from" if !value.is_empty() => req.year_from = Some(number(key, value)?),
            "year_to" if !value.is_empty() => req.year_to = Some(number(key, value)?),
            "journal" if !value.is_empty() => req.journals.push(value.to_string()),
            "source" if !value.is_empty() => req.sources.push(value.to_string()),
            "author" if !value.is_empty() => req.authors.push(value.to_string()),
            "page" if !value.is_empty() => req.page = number(key, value)?,
            "page_size" if !value.is_empty() => req.page_size = number(key, value)?,
            "preset" if !value.is_empty() => req.preset = value.to_string(),
            _ => {}
        }
    }
    Ok(req)
}

fn facets_json(f: &FacetCounts) -> Value {
    json!({
        "years": f.years,
        "authors": f.authors,
        "journals": f.journals,
        "sources": f.sources,
    })
}

pub fn response_json(resp: &SearchResponse) -> Value {
    let results: Vec<Value> = resp
        .results
        .iter()
        .map(|r| {
            let highlights: Vec<Value> = r
                .highlights
                .iter()
                .map(|h| json!({"paragraph": h.paragraph, "sentence": h.sentence, "start": h.start, "end": h.end}))
                .collect();
            json!({
                "article_id": r.article_id,
                "title": r.title,
                "abstract": r.abstract_text,
                "url": r.url,
                "journal": r.journal,
                "source": r.source,
                "authors": r.authors,
                "publish_time": r.publish_time,
                "score": r.score,
                "highlights": highlights,
            })
        })
        .collect();
    json!({
        "results": results,
        "facets": facets_json(&resp.facets),
        "total": resp.total,
        "degraded": resp.degraded,
        "page": resp.page,
        "page_size": resp.page_size,
        "preset": resp.preset.as_str(),
    })
}

pub fn article_json(a: &Article) -> Value {
    json!({
        "article_id": a.article_id,
        "title": a.title,
        "abstract": a.abstract_text,
        "paragraphs": a.paragraphs,
        "authors": a.authors,
        "journal": a.journal,
        "source": a.source,
        "publish_time": a.publish_time,
        "url": a.url,
    })
}

async fn search(
    State(state): State<Arc<AppState>>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    let req = parse_search_params(&pairs).map_err(bad_request)?;
    let resp = tokio::task::spawn_blocking(move || state.search(&req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(response_json(&resp)))
}

async fn article(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let engine = state.engine();
    Ok(Json(article_json(engine.article(&id)?)))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let engine = state.engine();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "articles": engine.len(),
        "corpus_version": corpus_version(&engine),
    }))
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let n = tokio::task::spawn_blocking(move || state.reload())
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(json!({ "articles": n })))
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such route".into())
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/search", get(search))
        .route("/api/article/{id}", get(article))
        .route("/api/reload", post(reload))
        .route("/healthz", get(healthz));
    let api = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    api.with_state(state)
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
