//! HTTP/JSON service: tagging with a loaded model set and post-correction
//! sessions over corpora kept as TSV files with an edit journal.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use histag::corpus::{validate, write_tsv, AnnotatedToken, Document, ReferenceSet, ValidationReport};
use histag::tagger::ModelSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod session;

pub use session::{replay, Change, EditColumn, Filters, JournalEntry, Session};
use session::{DEFAULT_CONTEXT, DEFAULT_LIMIT, MAX_CONTEXT, MAX_LIMIT};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown corpus `{0}`")]
    NotFound(String),
    #[error("{0} not loaded")]
    Unavailable(&'static str),
    #[error("expected {expected} matches, found {found}")]
    Conflict { expected: usize, found: usize },
    #[error("storage: {0}")]
    Storage(String),
    #[error("tagging failed: {0}")]
    Tagging(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Storage(_) | ServiceError::Tagging(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

type Result<T> = std::result::Result<T, ServiceError>;

/// Shared state: optional models and references, one lock per corpus.
#[derive(Clone, Default)]
pub struct AppState {
    pub models: Option<Arc<ModelSet>>,
    pub references: Option<Arc<ReferenceSet>>,
    pub corpora: Arc<BTreeMap<String, Arc<RwLock<Session>>>>,
}

impl AppState {
    pub fn new(
        models: Option<ModelSet>,
        references: Option<ReferenceSet>,
        sessions: Vec<Session>,
    ) -> Self {
        AppState {
            models: models.filter(|m| !m.is_empty()).map(Arc::new),
            references: references.map(Arc::new),
            corpora: Arc::new(
                sessions
                    .into_iter()
                    .map(|s| (s.id.clone(), Arc::new(RwLock::new(s))))
                    .collect(),
            ),
        }
    }

    /// Opens every `*.tsv` in `dir` as a session.
    pub fn open_corpus_dir(dir: &Path) -> Result<Vec<Session>> {
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Storage(format!("{}: {e}", dir.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        ids.iter().map(|id| Session::open(dir, id)).collect()
    }

    fn corpus(&self, id: &str) -> Result<&Arc<RwLock<Session>>> {
        self.corpora.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }
}

/// Where the served data lives.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub corpus_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub references: Option<ReferenceSet>,
}

impl ServiceConfig {
    pub fn load(self) -> Result<AppState> {
        let models = match &self.model_dir {
            Some(dir) => Some(ModelSet::load_dir(dir).map_err(|e| ServiceError::Storage(e.to_string()))?),
            None => None,
        };
        let sessions = match &self.corpus_dir {
            Some(dir) => AppState::open_corpus_dir(dir)?,
            None => Vec::new(),
        };
        Ok(AppState::new(models, self.references, sessions))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/tag", post(tag))
        .route("/corpora", get(corpora))
        .route("/corpus/{id}/tokens", get(tokens))
        .route("/corpus/{id}/search", post(search))
        .route("/corpus/{id}/batch-edit", post(batch_edit))
        .route("/corpus/{id}/unallowed", get(unallowed))
        .route("/corpus/{id}/export", get(export))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

// ---- tagging ----

#[derive(Debug, Deserialize)]
struct TagParams {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct TaggedToken {
    pub form: String,
    pub lemma: String,
    pub pos: String,
    pub morph: String,
}

/// Forms per sentence from raw token lines or TSV (first column); blank
/// lines separate sentences, `#` lines and a `form` header are skipped.
pub fn parse_tag_body(body: &[u8]) -> Result<Vec<Vec<String>>> {
    let text = std::str::from_utf8(body).map_err(|_| ServiceError::BadRequest("body is not UTF-8".into()))?;
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let form = line.split('\t').next().unwrap_or_default().trim();
        if i == 0 && form == "form" && line.contains('\t') {
            continue;
        }
        if form.is_empty() {
            return Err(ServiceError::BadRequest(format!("line {}: empty form", i + 1)));
        }
        current.push(form.to_string());
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(ServiceError::BadRequest("no tokens in body".into()));
    }
    Ok(sentences)
}

async fn tag(State(state): State<AppState>, Query(params): Query<TagParams>, body: Bytes) -> Result<Response> {
    let models = state.models.as_ref().ok_or(ServiceError::Unavailable("models"))?;
    let sentences = parse_tag_body(&body)?;
    let mut tagged = Vec::with_capacity(sentences.len());
    for forms in &sentences {
        let p = models
            .predict_sentence(forms)
            .map_err(|e| ServiceError::Tagging(e.to_string()))?;
        tagged.push(p.to_sentence());
    }
    if params.format.as_deref() == Some("json") {
        let rows: Vec<Vec<TaggedToken>> = tagged
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| TaggedToken {
                        form: t.form.clone(),
                        lemma: t.lemma.clone(),
                        pos: t.pos.clone(),
                        morph: t.morph.clone(),
                    })
                    .collect()
            })
            .collect();
        return Ok(Json(serde_json::json!({ "sentences": rows })).into_response());
    }
    let doc = Document::new("", tagged);
    Ok(tsv_response(write_tsv(&doc)))
}

fn tsv_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], bytes).into_response()
}

// ---- corpora ----

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct CorpusSummary {
    pub id: String,
    pub sentences: usize,
    pub tokens: usize,
    pub edits: usize,
}

async fn corpora(State(state): State<AppState>) -> Json<Vec<CorpusSummary>> {
    Json(
        state
            .corpora
            .values()
            .map(|s| {
                let s = s.read().expect("corpus lock");
                CorpusSummary {
                    id: s.id.clone(),
                    sentences: s.working.sentences.len(),
                    tokens: s.working.token_count(),
                    edits: s.journal.len(),
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TokenRow {
    /// Position in document order.
    pub index: usize,
    pub sentence: usize,
    pub token: usize,
    pub form: String,
    pub lemma: String,
    pub pos: String,
    pub morph: String,
}

impl TokenRow {
    fn new(index: usize, sentence: usize, token: usize, t: &AnnotatedToken) -> Self {
        TokenRow {
            index,
            sentence,
            token,
            form: t.form.clone(),
            lemma: t.lemma.clone(),
            pos: t.pos.clone(),
            morph: t.morph.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default)]
    limit: Option<usize>,
}

fn limit(requested: Option<usize>) -> Result<usize> {
    match requested.unwrap_or(DEFAULT_LIMIT) {
        0 => Err(ServiceError::BadRequest("limit must be positive".into())),
        n if n > MAX_LIMIT => Err(ServiceError::BadRequest(format!("limit must be at most {MAX_LIMIT}"))),
        n => Ok(n),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenPage {
    pub corpus: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub tokens: Vec<TokenRow>,
}

async fn tokens(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(page): Query<Page>,
) -> Result<Json<TokenPage>> {
    let limit = limit(page.limit)?;
    let session = state.corpus(&id)?.read().expect("corpus lock");
    let rows = session
        .working
        .sentences
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.tokens.iter().enumerate().map(move |(ti, t)| (si, ti, t)))
        .enumerate()
        .skip(page.offset)
        .take(limit)
        .map(|(i, (si, ti, t))| TokenRow::new(i, si, ti, t))
        .collect();
    Ok(Json(TokenPage {
        corpus: id,
        total: session.working.token_count(),
        offset: page.offset,
        limit,
        tokens: rows,
    }))
}

// ---- search and edit ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(flatten)]
    pub filters: Filters,
    #[serde(default)]
    pub offset: usize,
    #[serde(default)]
    pub limit: Option<usize>,
    /// Tokens of sentence context on each side.
    #[serde(default)]
    pub context: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Concordance {
    #[serde(flatten)]
    pub row: TokenRow,
    pub left: Vec<String>,
    pub right: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub matches: Vec<Concordance>,
}

fn sentence_offsets(doc: &Document) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(doc.sentences.len());
    let mut n = 0;
    for s in &doc.sentences {
        offsets.push(n);
        n += s.len();
    }
    offsets
}

async fn search(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SearchRequest>,
) -> Result<Json<SearchResult>> {
    let limit = limit(req.limit)?;
    let context = req.context.unwrap_or(DEFAULT_CONTEXT);
    if context > MAX_CONTEXT {
        return Err(ServiceError::BadRequest(format!("context must be at most {MAX_CONTEXT}")));
    }
    let matcher = req.filters.matcher()?;
    let session = state.corpus(&id)?.read().expect("corpus lock");
    let doc = &session.working;
    let found = matcher.find(doc);
    let offsets = sentence_offsets(doc);
    let matches = found
        .iter()
        .skip(req.offset)
        .take(limit)
        .map(|&(si, ti)| {
            let tokens = &doc.sentences[si].tokens;
            let forms = |range: std::ops::Range<usize>| tokens[range].iter().map(|t| t.form.clone()).collect();
            Concordance {
                row: TokenRow::new(offsets[si] + ti, si, ti, &tokens[ti]),
                left: forms(ti.saturating_sub(context)..ti),
                right: forms(ti + 1..(ti + 1 + context).min(tokens.len())),
            }
        })
        .collect();
    Ok(Json(SearchResult {
        total: found.len(),
        offset: req.offset,
        limit,
        matches,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchEditRequest {
    pub query: Filters,
    pub column: String,
    pub value: String,
    /// Match count the client previewed; a different current count is a
    /// conflict.
    #[serde(default)]
    pub expected_matches: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BatchEditResult {
    pub count: usize,
    pub journal_length: usize,
}

async fn batch_edit(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<BatchEditRequest>,
) -> Result<Json<BatchEditResult>> {
    let column = EditColumn::parse(&req.column)?;
    let mut session = state.corpus(&id)?.write().expect("corpus lock");
    let count = session.batch_edit(&req.query, column, &req.value, req.expected_matches)?;
    Ok(Json(BatchEditResult {
        count,
        journal_length: session.journal.len(),
    }))
}

async fn unallowed(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ValidationReport>> {
    let corpus = state.corpus(&id)?;
    let refs = state.references.as_ref().ok_or(ServiceError::Unavailable("reference lists"))?;
    let session = corpus.read().expect("corpus lock");
    Ok(Json(validate(&session.working, refs)))
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response> {
    let session = state.corpus(&id)?.read().expect("corpus lock");
    Ok(tsv_response(write_tsv(&session.working)))
}
