//! WebSocket front end for annotation sessions.
//!
//! Each session gets its own job queue drained by one task, so requests for
//! a session run strictly in arrival order while different sessions run in
//! parallel on the blocking pool. Replies and propagation updates go back
//! through the outbox of the connection that sent the request; a dropped
//! connection does not stop the session, and a new connection can attach
//! to it by id.
//!
//! An instance can run the segmentation role, the rendering role, or both.
//! A rendering-only instance meshes completed sessions found in a shared
//! data directory through `POST /sessions/{id}/mesh`.

mod guidance;
mod ws_backend;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

use medseg_core::volume::{load_mask, load_volume};

use medseg_core::protocol::{
    decode_payload, encode_payload, Envelope, ErrorCode, OpenSessionRequest, MeshRequest, ProtocolError, OPEN_SESSION,
    REQUEST_MESH,
};
use medseg_core::session::{
    write_meshes, Session, SessionContext, CONTEXT_OBJ, EVENTS_FILE, LESION_OBJ, MASKS_FILE, REPORT_FILE, TRIALS_FILE, VOLUME_LINK,
};

pub use guidance::HttpGuidanceProvider;
pub use ws_backend::WsTransport;

type Outbox = mpsc::UnboundedSender<Envelope>;

enum Work {
    Request { kind: String, payload: Value },
    Snapshot,
}

struct Job {
    work: Work,
    seq: u64,
    out: Outbox,
}

#[derive(Clone)]
struct SessionHandle {
    jobs: mpsc::UnboundedSender<Job>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roles {
    /// Sessions over `/ws`.
    pub segmentation: bool,
    /// Mesh extraction, over `/ws` and `POST /sessions/{id}/mesh`.
    pub rendering: bool,
}

impl Default for Roles {
    fn default() -> Self {
        Self {
            segmentation: true,
            rendering: true,
        }
    }
}

pub struct AppState {
    ctx: Arc<SessionContext>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    static_dir: Option<PathBuf>,
    roles: Roles,
}

impl AppState {
    pub fn new(ctx: Arc<SessionContext>, static_dir: Option<PathBuf>) -> Arc<Self> {
        Self::with_roles(ctx, static_dir, Roles::default())
    }

    pub fn with_roles(ctx: Arc<SessionContext>, static_dir: Option<PathBuf>, roles: Roles) -> Arc<Self> {
        Arc::new(Self {
            ctx,
            sessions: Mutex::new(HashMap::new()),
            static_dir,
            roles,
        })
    }

    pub fn roles(&self) -> Roles {
        self.roles
    }

    pub fn context(&self) -> &Arc<SessionContext> {
        &self.ctx
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    fn lookup(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    async fn dispatch(self: &Arc<Self>, text: &str, out: &Outbox) {
        let env: Envelope = match serde_json::from_str(text) {
            Ok(e) => e,
            Err(e) => {
                let err = ProtocolError::new(ErrorCode::InvalidRequest, format!("malformed frame: {e}"));
                let _ = out.send(Envelope::error(None, 0, &err));
                return;
            }
        };
        if env.kind == OPEN_SESSION {
            self.open(env, out).await;
            return;
        }
        let reply_err = |code, msg: String| {
            let _ = out.send(Envelope::error(env.session_id.clone(), env.seq, &ProtocolError::new(code, msg)));
        };
        let Some(id) = env.session_id.as_deref() else {
            return reply_err(ErrorCode::InvalidRequest, format!("{} needs a session_id", env.kind));
        };
        if env.kind == REQUEST_MESH && !self.roles.rendering {
            return reply_err(
                ErrorCode::Precondition,
                format!("rendering is disabled here; POST /sessions/{id}/mesh on a rendering instance"),
            );
        }
        let Some(handle) = self.lookup(id) else {
            return reply_err(ErrorCode::UnknownSession, format!("no session {id:?}"));
        };
        let job = Job {
            work: Work::Request {
                kind: env.kind.clone(),
                payload: env.payload.clone(),
            },
            seq: env.seq,
            out: out.clone(),
        };
        if handle.jobs.send(job).is_err() {
            reply_err(ErrorCode::UnknownSession, format!("session {id:?} has stopped"));
        }
    }

    async fn open(self: &Arc<Self>, env: Envelope, out: &Outbox) {
        let seq = env.seq;
        let request: OpenSessionRequest = match decode_payload(&env.payload) {
            Ok(r) => r,
            Err(e) => {
                let _ = out.send(Envelope::error(None, seq, &e));
                return;
            }
        };
        if let Some(id) = request.attach.as_deref() {
            match self.lookup(id) {
                Some(h) => {
                    let _ = h.jobs.send(Job {
                        work: Work::Snapshot,
                        seq,
                        out: out.clone(),
                    });
                }
                None => {
                    let err = ProtocolError::new(ErrorCode::UnknownSession, format!("no session {id:?}"));
                    let _ = out.send(Envelope::error(None, seq, &err));
                }
            }
            return;
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let ctx = self.ctx.clone();
        let open_id = id.clone();
        let opened = tokio::task::spawn_blocking(move || Session::open(ctx, &open_id, &request)).await;
        let reply = match opened {
            Ok(Ok((session, reply))) => {
                let handle = spawn_worker(session);
                self.sessions.lock().expect("registry lock").insert(id.clone(), handle);
                tracing::info!(session = %id, "session opened");
                Envelope::new(OPEN_SESSION, Some(id), seq, encode_payload(&reply))
            }
            Ok(Err(e)) => Envelope::error(None, seq, &e),
            Err(e) => Envelope::error(None, seq, &ProtocolError::new(ErrorCode::Io, format!("open failed: {e}"))),
        };
        let _ = out.send(reply);
    }
}

fn run_job(session: &Mutex<Session>, job: Job) {
    // A panic in an earlier job leaves the session as it was at the panic
    // point; keep serving it rather than poisoning it forever.
    let mut session = session.lock().unwrap_or_else(|p| p.into_inner());
    let id = session.id().to_string();
    let Job { work, seq, out } = job;
    let reply = match work {
        Work::Snapshot => match session.snapshot() {
            Ok(r) => Envelope::new(OPEN_SESSION, Some(id), seq, encode_payload(&r)),
            Err(e) => Envelope::error(Some(id), seq, &e),
        },
        Work::Request { kind, payload } => {
            let push_id = id.clone();
            let push_out = out.clone();
            let mut push = |k: &str, p: Value| {
                let _ = push_out.send(Envelope::new(k, Some(push_id.clone()), seq, p));
            };
            match session.handle(&kind, &payload, &mut push) {
                Ok((k, p)) => Envelope::new(k, Some(id), seq, p),
                Err(e) => Envelope::error(Some(id), seq, &e),
            }
        }
    };
    let _ = out.send(reply);
}

fn spawn_worker(session: Session) -> SessionHandle {
    let (tx, mut rx) = mpsc::unbounded_channel::<Job>();
    let id = session.id().to_string();
    let session = Arc::new(Mutex::new(session));
    tokio::spawn(async move {
        while let Some(job) = rx.recv().await {
            let (seq, out) = (job.seq, job.out.clone());
            let s = session.clone();
            if let Err(e) = tokio::task::spawn_blocking(move || run_job(&s, job)).await {
                tracing::error!(session = %id, "request failed: {e}");
                let err = ProtocolError::new(ErrorCode::Backend, "internal error while handling request");
                let _ = out.send(Envelope::error(Some(id.clone()), seq, &err));
            }
        }
    });
    SessionHandle { jobs: tx }
}

async fn connection(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Envelope>();
    tokio::spawn(async move {
        while let Some(env) = out_rx.recv().await {
            let text = serde_json::to_string(&env).expect("envelope serializes");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => state.dispatch(text.as_str(), &out_tx).await,
            Message::Close(_) => break,
            _ => {}
        }
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.max_message_size(64 << 20)
        .on_upgrade(move |socket| connection(socket, state))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let identity = state.ctx.backend.identity();
    Json(json!({
        "status": "ok",
        "sessions": state.session_count(),
        "backend": identity,
        "indexes": state.ctx.indexes.keys().collect::<Vec<_>>(),
        "roles": { "segmentation": state.roles.segmentation, "rendering": state.roles.rendering },
    }))
}

const SERVED_FILES: &[(&str, &str)] = &[
    (MASKS_FILE, "application/gzip"),
    (EVENTS_FILE, "application/x-ndjson"),
    (REPORT_FILE, "application/json"),
    (LESION_OBJ, "model/obj"),
    (CONTEXT_OBJ, "model/obj"),
    (VOLUME_LINK, "text/plain"),
    (TRIALS_FILE, "text/csv"),
];

async fn session_file(State(state): State<Arc<AppState>>, Path((id, name)): Path<(String, String)>) -> Response {
    let Some(&(_, mime)) = SERVED_FILES.iter().find(|(n, _)| *n == name) else {
        return (StatusCode::NOT_FOUND, "unknown artifact").into_response();
    };
    if !valid_session_id(&id) {
        return (StatusCode::BAD_REQUEST, "bad session id").into_response();
    }
    match tokio::fs::read(state.ctx.data_dir.join(&id).join(&name)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => (StatusCode::NOT_FOUND, "not found").into_response(),
    }
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Meshes a completed session from its saved volume link and masks.
async fn render_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<MeshRequest>>,
) -> Response {
    if !valid_session_id(&id) {
        return (StatusCode::BAD_REQUEST, "bad session id").into_response();
    }
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let ctx = state.ctx.clone();
    let job = tokio::task::spawn_blocking(move || -> Result<Value, ProtocolError> {
        let dir = ctx.data_dir.join(&id);
        let io = |what: &str, e: String| ProtocolError::new(ErrorCode::Precondition, format!("{what}: {e}"));
        let link = std::fs::read_to_string(dir.join(VOLUME_LINK)).map_err(|e| io("no such session", e.to_string()))?;
        let volume = load_volume(std::path::Path::new(link.trim())).map_err(|e| io("volume", e.to_string()))?;
        let masks = load_mask(&dir.join(MASKS_FILE)).map_err(|e| io("session is not completed", e.to_string()))?;
        let threshold = req.context_threshold.or_else(|| {
            req.include_context
                .then(|| ctx.profiles.context_threshold(&ctx.default_modality))
                .flatten()
        });
        Ok(encode_payload(&write_meshes(&dir, &id, &volume, &masks, threshold)?))
    });
    match job.await {
        Ok(Ok(reply)) => Json(reply).into_response(),
        Ok(Err(e)) => (StatusCode::UNPROCESSABLE_ENTITY, Json(encode_payload(&e))).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.static_dir.clone();
    let mut router = Router::new()
        .route("/health", get(health))
        .route("/sessions/{id}/files/{name}", get(session_file));
    if state.roles.segmentation {
        router = router.route("/ws", get(ws_upgrade));
    }
    if state.roles.rendering {
        router = router.route("/sessions/{id}/mesh", post(render_session));
    }
    let router = router.with_state(state);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in a background task.
pub async fn spawn(
    addr: SocketAddr,
    state: Arc<AppState>,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    Ok((bound, tokio::spawn(serve(listener, state))))
}
