//! HTTP front end for [`crate::session`]. Every session sits behind its
//! own lock, so requests to one session are serialized while different
//! sessions proceed independently.

use crate::session::{Engine, Session, SessionError, SessionRecord};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridshed::attack::AttackSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub const DATA_DIR_ENV: &str = "GRIDSHED_DATA_DIR";

pub struct AppState {
    engine: Engine,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    data_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn session_file(dir: &std::path::Path, id: &str) -> PathBuf {
    dir.join("sessions").join(format!("{id}.json"))
}

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

impl AppState {
    /// Builds the service state, replaying any sessions persisted under
    /// `data_dir`.
    pub fn new(engine: Engine, data_dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        if let Some(dir) = &data_dir {
            let sdir = dir.join("sessions");
            std::fs::create_dir_all(&sdir)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&sdir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for path in files {
                let rec: SessionRecord = serde_json::from_slice(&std::fs::read(&path)?)?;
                let s = Session::replay(&engine, &rec)
                    .map_err(|e| anyhow::anyhow!("replaying {}: {e}", path.display()))?;
                max_id = max_id.max(id_number(&rec.id).unwrap_or(0));
                sessions.insert(rec.id.clone(), Arc::new(Mutex::new(s)));
            }
            log::info!(
                "restored {} sessions from {}",
                sessions.len(),
                sdir.display()
            );
        }
        Ok(AppState {
            engine,
            sessions: Mutex::new(sessions),
            next_id: AtomicU64::new(max_id + 1),
            data_dir,
        })
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn persist(&self, s: &Session) -> ApiResult<()> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let write = || -> std::io::Result<()> {
            let path = session_file(dir, s.id());
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_vec_pretty(s.record())?)?;
            std::fs::rename(tmp, path)
        };
        write().map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("persisting session: {e}"),
            )
        })
    }
}

type Shared = Arc<AppState>;

/// Runs `f` on the session's lock in a blocking task.
async fn with_session<T: Send + 'static>(
    st: Shared,
    id: String,
    f: impl FnOnce(&AppState, &mut Session) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    let sess = st.session(&id)?;
    tokio::task::spawn_blocking(move || {
        let mut guard = sess.lock().expect("session lock");
        f(&st, &mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct CreateRequest {
    attack: AttackSpec,
}

#[derive(Deserialize)]
struct StepRequest {
    seconds: f64,
}

#[derive(Deserialize)]
struct ShedRequest {
    load_index: usize,
}

#[derive(Deserialize)]
struct StateQuery {
    #[serde(default)]
    from: Option<f64>,
    /// Comma-separated channel names.
    #[serde(default)]
    channels: Option<String>,
}

#[derive(Serialize)]
struct Created {
    id: String,
    status: crate::session::Status,
}

async fn create(State(st): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: CreateRequest = parse_body(&body)?;
    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::SeqCst));
    let st2 = st.clone();
    let sess = tokio::task::spawn_blocking(move || Session::new(&st2.engine, id, req.attack))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    st.persist(&sess)?;
    let out = Created {
        id: sess.id().to_string(),
        status: sess.status(),
    };
    st.sessions
        .lock()
        .expect("session table lock")
        .insert(out.id.clone(), Arc::new(Mutex::new(sess)));
    Ok((StatusCode::CREATED, Json(out)))
}

async fn list(State(st): State<Shared>) -> Json<Vec<String>> {
    Json(
        st.sessions
            .lock()
            .expect("session table lock")
            .keys()
            .cloned()
            .collect(),
    )
}

async fn summary(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(st, id, |_, s| Ok(Json(s.summary()).into_response())).await
}

async fn step(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: StepRequest = parse_body(&body)?;
    with_session(st, id, move |app, s| {
        s.step(&app.engine, req.seconds)?;
        app.persist(s)?;
        Ok(Json(s.summary()).into_response())
    })
    .await
}

async fn shed(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: ShedRequest = parse_body(&body)?;
    with_session(st, id, move |app, s| {
        s.shed(&app.engine, req.load_index)?;
        app.persist(s)?;
        Ok(Json(s.summary()).into_response())
    })
    .await
}

async fn state(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<StateQuery>,
) -> ApiResult<Response> {
    let from = q.from.unwrap_or(f64::NEG_INFINITY);
    if from.is_nan() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "from must be a number",
        ));
    }
    let channels: Option<Vec<String>> = q.channels.map(|c| {
        c.split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    });
    with_session(st, id, move |_, s| {
        Ok(Json(s.state(from, channels.as_deref())?).into_response())
    })
    .await
}

async fn alarm(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(st, id, |_, s| Ok(Json(s.alarm()).into_response())).await
}

async fn recommendations(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(st, id, |app, s| {
        Ok(Json(s.recommendations(&app.engine)?).into_response())
    })
    .await
}

async fn outcome(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(st, id, |app, s| {
        Ok(Json(s.outcome(&app.engine)?).into_response())
    })
    .await
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenario", post(create).get(list))
        .route("/scenario/{id}", get(summary))
        .route("/scenario/{id}/step", post(step))
        .route("/scenario/{id}/state", get(state))
        .route("/scenario/{id}/alarm", get(alarm))
        .route("/scenario/{id}/recommendations", get(recommendations))
        .route("/scenario/{id}/shed", post(shed))
        .route("/scenario/{id}/outcome", get(outcome))
        .with_state(app)
}

pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
