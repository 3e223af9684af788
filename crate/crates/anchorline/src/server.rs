//! HTTP facade over the mission store, the shared map and executions.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use anchorline_core::anchor_sim::{AnchorStore, RelocModel};
use anchorline_core::executor::{ExecError, Execution, ExecutorConfig};
use anchorline_core::gestures::Command;
use anchorline_core::mapconv::OccupancyGrid;
use anchorline_core::mission::{Mission, MissionError, MissionStore};
use anchorline_core::nav::Pose2D;
use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::{watch, Mutex, RwLock};

use crate::config::ApiConfig;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("PortInUse: {0}")]
    PortInUse(String),
    #[error("StoreCorrupt: {0}")]
    StoreCorrupt(String),
    #[error("Io: {0}")]
    Io(String),
}

/// JSON error body `{"error": kind, "message": ...}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            kind: kind.into(),
            message: message.into(),
        }
    }

    fn unknown_execution(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownExecution", format!("no execution {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

impl From<MissionError> for ApiError {
    fn from(e: MissionError) -> Self {
        let status = match &e {
            MissionError::UnknownMission(_) => StatusCode::NOT_FOUND,
            MissionError::InvalidMissionId(_) => StatusCode::BAD_REQUEST,
            MissionError::StoreWriteFailure(_) | MissionError::Anchor(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl From<ExecError> for ApiError {
    fn from(e: ExecError) -> Self {
        let status = match &e {
            ExecError::UnknownMission(_) => StatusCode::NOT_FOUND,
            ExecError::NotAwaitingBranch(_) | ExecError::MissionActive => StatusCode::CONFLICT,
            ExecError::Anchor(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

struct ExecHandle {
    exec: Mutex<Execution>,
    last_seq: watch::Sender<u64>,
}

impl ExecHandle {
    fn publish(&self, exec: &Execution) {
        self.last_seq.send_replace(exec.last_seq());
    }
}

pub struct AppState {
    missions: MissionStore,
    anchors: AnchorStore,
    grid: Arc<OccupancyGrid>,
    grid_json: String,
    model: RelocModel,
    exec_cfg: ExecutorConfig,
    robot_start: Pose2D,
    tick_interval: Duration,
    executions: RwLock<HashMap<String, Arc<ExecHandle>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Opens every store named in `cfg`.
    pub fn load(cfg: &ApiConfig) -> Result<Self, ServeError> {
        let corrupt = |e: String| ServeError::StoreCorrupt(e);
        let missions = MissionStore::open(&cfg.mission_dir).map_err(|e| corrupt(e.to_string()))?;
        let anchors = AnchorStore::open(&cfg.anchor_store).map_err(|e| corrupt(e.to_string()))?;
        let grid_text = std::fs::read_to_string(&cfg.grid)
            .map_err(|e| corrupt(format!("{}: {e}", cfg.grid.display())))?;
        let grid = OccupancyGrid::from_json(&grid_text).map_err(|e| corrupt(e.to_string()))?;
        let model = cfg.reloc_model();
        model.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            missions,
            anchors,
            grid_json: grid.to_json(),
            grid: Arc::new(grid),
            model,
            exec_cfg: cfg.executor_config(),
            robot_start: cfg.robot_start,
            tick_interval: Duration::from_millis(cfg.tick_interval_ms),
            executions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    async fn execution(&self, id: &str) -> Result<Arc<ExecHandle>, ApiError> {
        self.executions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_execution(id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/missions", get(list_missions))
        .route("/missions/{id}", get(get_mission).put(put_mission).delete(delete_mission))
        .route("/map", get(get_map))
        .route("/executions", post(create_execution))
        .route("/executions/{id}", get(get_execution))
        .route("/executions/{id}/events", get(stream_events))
        .route("/executions/{id}/branch", post(resolve_branch))
        .route("/executions/{id}/preempt", post(preempt))
        .route("/executions/{id}/command", post(command))
        .with_state(state)
}

#[derive(Serialize)]
struct MissionListing {
    id: String,
    label: String,
    waypoint_count: usize,
}

async fn list_missions(State(app): State<Arc<AppState>>) -> Result<Json<Vec<MissionListing>>, ApiError> {
    let mut out = Vec::new();
    for id in app.missions.ids()? {
        // A file that fails to load is skipped rather than failing the list.
        if let Ok(m) = app.missions.load(&id) {
            out.push(MissionListing {
                label: m.id.clone(),
                id: m.id,
                waypoint_count: m.waypoints.len(),
            });
        }
    }
    Ok(Json(out))
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn get_mission(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_text(app.missions.load_raw(&id)?))
}

async fn put_mission(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    anchorline_core::mission::validate_mission_id(&id)?;
    let mission = Mission::deserialize(&body).map_err(|e| match e {
        MissionError::MalformedDocument(_) => ApiError::new(StatusCode::BAD_REQUEST, e.kind(), e.to_string()),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "IntegrityViolation", other.to_string()),
    })?;
    if mission.id != id {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "IntegrityViolation",
            format!("document id {:?} does not match path id {id:?}", mission.id),
        ));
    }
    if let Some(missing) = mission.anchor_ids.iter().find(|a| app.anchors.get(a).is_none()) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "IntegrityViolation",
            format!("anchor {missing} is not in the anchor store"),
        ));
    }
    app.missions.save(&mission)?;
    Ok(json_text(mission.serialize()))
}

async fn delete_mission(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    app.missions.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_map(State(app): State<Arc<AppState>>) -> Response {
    json_text(app.grid_json.clone())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateExecution {
    #[serde(default)]
    mission_id: Option<String>,
}

async fn create_execution(
    State(app): State<Arc<AppState>>,
    body: Option<Json<CreateExecution>>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let mut exec = Execution::new(app.grid.clone(), app.model, app.exec_cfg, app.robot_start)?;
    if let Some(mid) = &req.mission_id {
        let mission = app.missions.load(mid).map_err(|e| match e {
            MissionError::UnknownMission(_) | MissionError::InvalidMissionId(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "UnknownMission", format!("no mission {mid}"))
            }
            other => other.into(),
        })?;
        exec.begin(mission, &app.anchors)?;
    }
    let id = format!("exec-{}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let (tx, _) = watch::channel(exec.last_seq());
    let handle = Arc::new(ExecHandle {
        exec: Mutex::new(exec),
        last_seq: tx,
    });
    app.executions.write().await.insert(id.clone(), handle.clone());
    tokio::spawn(drive(Arc::downgrade(&handle), app.tick_interval));
    tracing::info!(execution = %id, mission = ?req.mission_id, "execution created");
    Ok((StatusCode::CREATED, Json(json!({"execution_id": id}))))
}

/// Advances an execution in simulated time until its handle is dropped.
async fn drive(handle: Weak<ExecHandle>, interval: Duration) {
    let mut ticker = tokio::time::interval(interval.max(Duration::from_millis(1)));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        let Some(h) = handle.upgrade() else { return };
        let mut exec = h.exec.lock().await;
        let dt = exec.config().dt;
        let before = exec.last_seq();
        exec.tick(dt);
        if exec.last_seq() != before {
            h.publish(&exec);
        }
    }
}

async fn get_execution(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let h = app.execution(&id).await?;
    let exec = h.exec.lock().await;
    let mut v = serde_json::to_value(exec.summary()).expect("summary serializes");
    v["execution_id"] = json!(id);
    Ok(Json(v))
}

#[derive(Deserialize)]
struct EventQuery {
    #[serde(default)]
    from: u64,
}

/// Newline-delimited events with `seq > from`. The response ends once the
/// execution is in a terminal state and every event has been written.
async fn stream_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventQuery>,
) -> Result<Response, ApiError> {
    let h = app.execution(&id).await?;
    let rx = h.last_seq.subscribe();
    let stream = futures::stream::unfold(
        (h, rx, q.from, false),
        |(h, mut rx, cursor, done)| async move {
            if done {
                return None;
            }
            loop {
                let (chunk, next, finished) = {
                    let exec = h.exec.lock().await;
                    let events = exec.events_after(cursor);
                    let mut buf = String::new();
                    for e in events {
                        buf.push_str(&serde_json::to_string(e).expect("event serializes"));
                        buf.push('\n');
                    }
                    (buf, exec.last_seq().max(cursor), exec.state().is_terminal())
                };
                if !chunk.is_empty() {
                    return Some((Ok::<_, Infallible>(Bytes::from(chunk)), (h, rx, next, finished)));
                }
                if finished {
                    return None;
                }
                rx.borrow_and_update();
                // Re-check after marking the current value as seen.
                if h.exec.lock().await.last_seq() > cursor {
                    continue;
                }
                if rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRequest {
    node: String,
    order: u32,
}

async fn resolve_branch(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<BranchRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let h = app.execution(&id).await?;
    let mut exec = h.exec.lock().await;
    let state = exec.resolve_branch(&req.node, req.order)?.clone();
    h.publish(&exec);
    Ok(Json(json!({ "state": state })))
}

async fn preempt(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let h = app.execution(&id).await?;
    let mut exec = h.exec.lock().await;
    let state = exec.preempt().clone();
    h.publish(&exec);
    Ok(Json(json!({ "state": state })))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum CommandRequest {
    Goal {
        x: f64,
        y: f64,
        #[serde(default)]
        yaw: Option<f64>,
    },
    Preempt,
    Noop,
}

async fn command(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<CommandRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let h = app.execution(&id).await?;
    let mut exec = h.exec.lock().await;
    let cmd = match req {
        CommandRequest::Goal { x, y, yaw } => {
            // Without a yaw the robot keeps facing along its approach.
            let here = exec.robot().pose;
            let yaw = yaw.unwrap_or_else(|| (y - here.y).atan2(x - here.x));
            Command::Goal { x, y, yaw }
        }
        CommandRequest::Preempt => Command::Preempt,
        CommandRequest::Noop => Command::NoOp,
    };
    let state = exec.inject_command(cmd)?.clone();
    h.publish(&exec);
    Ok(Json(json!({ "state": state })))
}

/// A bound, running server.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }

    pub async fn wait(self) -> std::io::Result<()> {
        self.task.await.map_err(std::io::Error::other)?
    }
}

/// Loads the stores, binds `cfg.host:cfg.port` and serves in the background.
pub async fn spawn(cfg: &ApiConfig) -> Result<RunningServer, ServeError> {
    let state = Arc::new(AppState::load(cfg)?);
    let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port))
        .await
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => ServeError::PortInUse(format!("{}:{}", cfg.host, cfg.port)),
            _ => ServeError::Io(e.to_string()),
        })?;
    let addr = listener.local_addr().map_err(|e| ServeError::Io(e.to_string()))?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        task,
    })
}

/// Serves until Ctrl-C. Stores commit on every write, so nothing is
/// pending at shutdown.
pub async fn serve(cfg: &ApiConfig) -> Result<(), ServeError> {
    let server = spawn(cfg).await?;
    println!("listening on http://{}", server.addr);
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
    server.shutdown().await.map_err(|e| ServeError::Io(e.to_string()))
}
