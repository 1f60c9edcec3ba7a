//! HTTP service for interactive gesture training: create a session, register
//! gestures, upload samples, train, classify and tune the threshold.

pub mod session;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::Request;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use session::{ConfigPatch, Mode, Session, SessionConfig, SessionError, TrainRequest};

pub type SharedSession = Arc<Mutex<Session>>;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, SharedSession>>,
    next_id: AtomicU64,
}

impl AppState {
    fn get(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(SessionError::NotFound(format!("no session `{id}`"))))
    }
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(SessionError::BadRequest(r.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
        };
        (status, axum::Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

/// `Json` whose rejections come back as `{"error": ...}` with status 400.
struct Json<T>(T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Json<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let axum::Json(v) = axum::Json::<T>::from_request(req, state).await?;
        Ok(Json(v))
    }
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router() -> Router {
    router_with(Arc::new(AppState::default()))
}

pub fn router_with(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/gestures", post(add_gesture))
        .route("/sessions/{id}/gestures/{label}/samples", post(add_sample))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/classify", post(classify))
        .route("/sessions/{id}/config", get(get_config).patch(patch_config))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/models", get(models))
        .with_state(state)
}

/// Body that may be empty, in which case the defaults apply.
fn optional_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| SessionError::BadRequest(format!("invalid JSON body: {e}")).into())
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let patch: ConfigPatch = optional_body(&body)?;
    if patch.priors.as_ref().is_some_and(|p| !p.is_empty()) {
        return Err(SessionError::BadRequest("priors can only be set once gestures exist".into()).into());
    }
    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let mut s = Session::new(id.clone(), SessionConfig::default())?;
    s.patch_config(patch)?;
    let view = s.view();
    st.sessions.write().expect("session map poisoned").insert(id, Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.get(&id)?.lock().await.view()))
}

async fn delete_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match st.sessions.write().expect("session map poisoned").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(SessionError::NotFound(format!("no session `{id}`")).into()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewGesture {
    label: String,
}

async fn add_gesture(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(g): Json<NewGesture>,
) -> ApiResult<impl IntoResponse> {
    let info = st.get(&id)?.lock().await.add_gesture(&g.label)?;
    Ok((StatusCode::CREATED, Json(info)))
}

/// Either a bare `[[t, ax, ay, az], ...]` array or `{"samples": [...]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum SampleBody {
    Rows(Vec<[f64; 4]>),
    Wrapped { samples: Vec<[f64; 4]> },
}

impl SampleBody {
    fn rows(&self) -> &[[f64; 4]] {
        match self {
            SampleBody::Rows(r) | SampleBody::Wrapped { samples: r } => r,
        }
    }
}

async fn add_sample(
    State(st): State<Arc<AppState>>,
    Path((id, label)): Path<(String, String)>,
    Json(body): Json<SampleBody>,
) -> ApiResult<impl IntoResponse> {
    let trace = session::trace_from_rows(body.rows())?;
    let info = st.get(&id)?.lock().await.add_sample(&label, trace)?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn train(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: TrainRequest = optional_body(&body)?;
    let shared = st.get(&id)?;
    // Training is CPU-bound; keep it off the async workers. The session lock
    // is held throughout so concurrent uploads wait for the new models.
    let summary = tokio::task::spawn_blocking(move || shared.blocking_lock().train(&req))
        .await
        .map_err(|e| SessionError::BadRequest(format!("training task failed: {e}")))??;
    Ok(Json(summary))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    samples: Vec<[f64; 4]>,
    #[serde(default)]
    mode: Mode,
    thr: Option<f64>,
    #[serde(default)]
    seed: u64,
}

async fn classify(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ClassifyRequest>,
) -> ApiResult<impl IntoResponse> {
    let trace = session::trace_from_rows(&req.samples)?;
    let shared = st.get(&id)?;
    let job = shared.lock().await.classify_job(req.mode, req.thr, req.seed)?;
    let response = tokio::task::spawn_blocking(move || job.run(&trace))
        .await
        .map_err(|e| SessionError::BadRequest(format!("classification task failed: {e}")))??;
    shared.lock().await.record(&response);
    Ok(Json(response))
}

async fn get_config(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.get(&id)?.lock().await.view().config))
}

async fn patch_config(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(patch): Json<ConfigPatch>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.get(&id)?.lock().await.patch_config(patch)?))
}

#[derive(Deserialize)]
struct MetricsQuery {
    thr: Option<f64>,
}

async fn metrics(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<impl IntoResponse> {
    let shared = st.get(&id)?;
    let view = tokio::task::spawn_blocking(move || shared.blocking_lock().metrics(q.thr))
        .await
        .map_err(|e| SessionError::BadRequest(format!("metrics task failed: {e}")))??;
    Ok(Json(view))
}

async fn models(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let models = st.get(&id)?.lock().await.models();
    let models = models.ok_or_else(|| SessionError::Conflict("session has no trained models".into()))?;
    let text = quantgest::model::models_to_json(&models).map_err(SessionError::from)?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response())
}
