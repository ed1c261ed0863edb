//! HTTP/JSON backend over a single in-memory workspace.
//!
//! All workspace mutations go through one mutex and bump a version counter
//! that is returned as an `ETag`. Clients may send `If-Match` on any
//! mutating request; a stale version gets `409` and changes nothing. A
//! rejected request never leaves a partial edit behind.
//!
//! Simulations run on blocking worker threads, at most `max_runs` at a
//! time, admitted in FIFO order. Each run snapshots the topology and
//! templates at launch.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use crate::layout::{compute_layout, LayoutError, LayoutParams};
use crate::randreq::{SimError, Simulation, SimulationOptions, SimulationReport};
use crate::serialization::{
    export_results, export_simulation, export_templates, export_topology, import_simulation, simulation_from_value,
    template_from_value, templates_from_value, topology_from_value, write_results, RunInputs, SerializationError,
    SimulationFile, FORMAT_VERSION,
};
use crate::simkernel::ProgressHandle;
use crate::templates::{TemplateError, TemplateStore};
use crate::topology::{MatrixKind, NodePatch, NodeType, Topology, TopologyError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub output_root: PathBuf,
    pub max_runs: usize,
    /// Directory of the built UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            output_root: PathBuf::from("runs"),
            max_runs: 2,
            static_dir: None,
        }
    }
}

/// The editable network plus the optional simulation file.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    pub topology: Topology,
    pub templates: TemplateStore,
    pub simulation: Option<SimulationFile>,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Done,
    Failed,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "Running",
            RunStatus::Done => "Done",
            RunStatus::Failed => "Failed",
        }
    }
}

#[derive(Debug, Clone)]
struct RunEntry {
    status: RunStatus,
    progress: ProgressHandle,
    report: Option<SimulationReport>,
    error: Option<(String, String)>,
}

struct Shared {
    workspace: Mutex<Workspace>,
    runs: Mutex<BTreeMap<String, RunEntry>>,
    permits: Arc<Semaphore>,
    config: ServiceConfig,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(workspace: Workspace, config: ServiceConfig) -> Self {
        AppState(Arc::new(Shared {
            workspace: Mutex::new(workspace),
            runs: Mutex::new(BTreeMap::new()),
            permits: Arc::new(Semaphore::new(config.max_runs.max(1))),
            config,
        }))
    }

    /// Copy of the current workspace.
    pub fn snapshot(&self) -> Workspace {
        self.0.workspace.lock().expect("workspace lock").clone()
    }
}

/// `{"error", "path", "message"}` with an HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub path: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, path: Option<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            path,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        let what = what.into();
        Self::new(StatusCode::NOT_FOUND, "NotFound", None, format!("no such resource: {what}"))
    }

    fn bad(code: &str, path: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, Some(path.into()), message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "path": self.path, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

impl From<TopologyError> for ApiError {
    fn from(e: TopologyError) -> Self {
        let status = match e {
            TopologyError::UnknownElement(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), Some(e.path().into()), e.to_string())
    }
}

impl From<TemplateError> for ApiError {
    fn from(e: TemplateError) -> Self {
        let status = match e {
            TemplateError::UnknownTemplate { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.path().map(String::from), e.to_string())
    }
}

impl From<SerializationError> for ApiError {
    fn from(e: SerializationError) -> Self {
        let status = match e {
            SerializationError::RunExists(_) => StatusCode::CONFLICT,
            SerializationError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.path(), e.to_string())
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let path = match &e {
            SimError::InvalidConfig { field, .. } => Some(field.to_string()),
            SimError::TemplateResolution(t) => t.path().map(String::from),
            _ => None,
        };
        ApiError::new(StatusCode::BAD_REQUEST, e.code(), path, e.to_string())
    }
}

impl From<LayoutError> for ApiError {
    fn from(e: LayoutError) -> Self {
        let path = match e {
            LayoutError::InvalidParams(p) => Some(p.to_string()),
            LayoutError::EmptyTopology => None,
        };
        ApiError::new(StatusCode::BAD_REQUEST, e.code(), path, e.to_string())
    }
}

type ApiResult = Result<Response, ApiError>;

fn parse_body(body: &Bytes) -> Result<Value, ApiError> {
    if body.is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad("ParseError", "$", e.to_string()))
}

fn decode<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T, ApiError> {
    serde_json::from_value(value).map_err(|e| ApiError::bad("SchemaError", "$", e.to_string()))
}

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("ascii")
}

fn json_text(status: StatusCode, text: String, version: Option<u64>) -> Response {
    let mut resp = (status, [(header::CONTENT_TYPE, "application/json")], text).into_response();
    if let Some(v) = version {
        resp.headers_mut().insert(header::ETAG, etag(v));
    }
    resp
}

fn json_value(status: StatusCode, value: Value, version: Option<u64>) -> Response {
    let mut resp = (status, Json(value)).into_response();
    if let Some(v) = version {
        resp.headers_mut().insert(header::ETAG, etag(v));
    }
    resp
}

impl AppState {
    /// Runs `edit` on a scratch copy of the workspace and commits it only on
    /// success, after checking `If-Match` against the current version.
    fn mutate<T>(
        &self,
        headers: &HeaderMap,
        edit: impl FnOnce(&mut Workspace) -> Result<T, ApiError>,
    ) -> Result<(T, u64), ApiError> {
        let mut ws = self.0.workspace.lock().expect("workspace lock");
        if let Some(expected) = headers.get(header::IF_MATCH) {
            let expected = expected.to_str().unwrap_or("").trim();
            if expected != "*" && expected.trim_matches('"') != ws.version.to_string() {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "VersionConflict",
                    Some("If-Match".into()),
                    format!("workspace is at version {}, not {expected}", ws.version),
                ));
            }
        }
        let mut next = ws.clone();
        let out = edit(&mut next)?;
        next.version = ws.version + 1;
        *ws = next;
        Ok((out, ws.version))
    }

    fn read<T>(&self, f: impl FnOnce(&Workspace) -> T) -> (T, u64) {
        let ws = self.0.workspace.lock().expect("workspace lock");
        (f(&ws), ws.version)
    }
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

async fn get_topology(State(s): State<AppState>) -> Response {
    let (text, v) = s.read(|ws| export_topology(&ws.topology));
    json_text(StatusCode::OK, text, Some(v))
}

async fn put_topology(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let doc = parse_body(&body)?;
    let (text, v) = s.mutate(&headers, |ws| {
        let topo = topology_from_value(&doc)?;
        ws.templates.check_nodes(&topo)?;
        ws.topology = topo;
        Ok(export_topology(&ws.topology))
    })?;
    Ok(json_text(StatusCode::OK, text, Some(v)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewNode {
    name: String,
    #[serde(rename = "type")]
    node_type: NodeType,
    template: String,
}

async fn post_node(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let node: NewNode = decode(parse_body(&body)?)?;
    let ((), v) = s.mutate(&headers, |ws| {
        let templates = ws.templates.clone();
        Ok(ws.topology.add_node(&templates, &node.name, node.node_type, &node.template)?)
    })?;
    Ok(json_value(
        StatusCode::CREATED,
        json!({"name": node.name, "type": node.node_type.as_str(), "template": node.template}),
        Some(v),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewEdge {
    a: String,
    b: String,
    distance_m: f64,
    attenuation_db_km: f64,
}

async fn post_edge(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let edge: NewEdge = decode(parse_body(&body)?)?;
    let ((), v) = s.mutate(&headers, |ws| {
        let templates = ws.templates.clone();
        Ok(ws
            .topology
            .add_edge(&templates, &edge.a, &edge.b, edge.distance_m, edge.attenuation_db_km)?)
    })?;
    Ok(json_value(
        StatusCode::CREATED,
        json!({"bsm": crate::topology::bsm_name(&edge.a, &edge.b)}),
        Some(v),
    ))
}

async fn patch_node(
    State(s): State<AppState>,
    Path(name): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let patch: NodePatch = decode(parse_body(&body)?)?;
    let (node, v) = s.mutate(&headers, |ws| {
        if ws.topology.node(&name).is_none() {
            return Err(ApiError::not_found(format!("node {name}")));
        }
        let templates = ws.templates.clone();
        ws.topology.edit_node(&templates, &name, &patch)?;
        Ok(ws.topology.node(&name).cloned().expect("edited node"))
    })?;
    Ok(json_value(
        StatusCode::OK,
        json!({"name": node.name, "type": node.node_type.as_str(), "template": node.template_id}),
        Some(v),
    ))
}

async fn delete_element(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let ((), v) = s.mutate(&headers, |ws| {
        let element = ws
            .topology
            .parse_element(&id)
            .ok_or_else(|| ApiError::not_found(format!("element {id}")))?;
        Ok(ws.topology.remove_element(&element)?)
    })?;
    let mut resp = StatusCode::NO_CONTENT.into_response();
    resp.headers_mut().insert(header::ETAG, etag(v));
    Ok(resp)
}

async fn get_legend(State(s): State<AppState>) -> Response {
    let (legend, v) = s.read(|ws| ws.topology.legend());
    let names: Vec<&str> = legend.iter().map(NodeType::as_str).collect();
    json_value(StatusCode::OK, json!(names), Some(v))
}

fn matrix_kind(kind: &str) -> Result<MatrixKind, ApiError> {
    MatrixKind::parse(kind).ok_or_else(|| ApiError::not_found(format!("matrix {kind}")))
}

fn matrix_value(topo: &Topology, kind: MatrixKind) -> Value {
    let names: Vec<&str> = topo.nodes().iter().map(|n| n.name.as_str()).collect();
    let values = match kind {
        MatrixKind::CcLatency => json!(topo.cc_latency()),
        MatrixKind::QcTdm => json!(topo.qc_tdm()),
    };
    json!({"names": names, "values": values})
}

async fn get_matrix(State(s): State<AppState>, Path(kind): Path<String>) -> ApiResult {
    let kind = matrix_kind(&kind)?;
    let (value, v) = s.read(|ws| matrix_value(&ws.topology, kind));
    Ok(json_value(StatusCode::OK, value, Some(v)))
}

/// Either a full matrix `{"values": [[...]]}` or one cell
/// `{"row": name, "col": name, "value": n}`.
#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum MatrixUpdate {
    Full { values: Vec<Vec<f64>> },
    Cell { row: String, col: String, value: f64 },
}

async fn put_matrix(
    State(s): State<AppState>,
    Path(kind): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let kind = matrix_kind(&kind)?;
    let update: MatrixUpdate = decode(parse_body(&body)?)?;
    let (value, v) = s.mutate(&headers, |ws| {
        match &update {
            MatrixUpdate::Full { values } => ws.topology.set_matrix(kind, values)?,
            MatrixUpdate::Cell { row, col, value } => ws.topology.set_matrix_entry(kind, row, col, *value)?,
        }
        Ok(matrix_value(&ws.topology, kind))
    })?;
    Ok(json_value(StatusCode::OK, value, Some(v)))
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

async fn get_templates(State(s): State<AppState>) -> Response {
    let (text, v) = s.read(|ws| export_templates(&ws.templates));
    json_text(StatusCode::OK, text, Some(v))
}

async fn put_template(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let mut doc = parse_body(&body)?;
    if let Some(obj) = doc.as_object_mut() {
        match obj.get("id") {
            Some(given) if given.as_str() != Some(id.as_str()) => {
                return Err(ApiError::bad("SchemaError", "id", "body id does not match the URL"));
            }
            Some(_) => {}
            None => {
                obj.insert("id".into(), json!(id));
            }
        }
    }
    let template = template_from_value(&doc, "")?;
    let (created, v) = s.mutate(&headers, |ws| {
        let created = !ws.templates.contains(&id);
        let topo = ws.topology.clone();
        ws.templates.upsert(template.clone(), &topo)?;
        Ok(created)
    })?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok(json_value(status, crate::serialization::template_to_value(&template), Some(v)))
}

async fn delete_template(State(s): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult {
    let (_, v) = s.mutate(&headers, |ws| {
        let topo = ws.topology.clone();
        Ok(ws.templates.delete(&id, &topo)?)
    })?;
    let mut resp = StatusCode::NO_CONTENT.into_response();
    resp.headers_mut().insert(header::ETAG, etag(v));
    Ok(resp)
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct LayoutRequest {
    #[serde(flatten)]
    params: LayoutParams,
    #[serde(default)]
    seed: u64,
}

async fn post_layout(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: LayoutRequest = decode(parse_body(&body)?)?;
    let (topo, _) = s.read(|ws| ws.topology.clone());
    let result = tokio::task::spawn_blocking(move || compute_layout(&topo, &req.params, req.seed))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", None, e.to_string()))??;
    Ok(json_value(StatusCode::OK, json!(result), None))
}

// ---------------------------------------------------------------------------
// Simulations
// ---------------------------------------------------------------------------

async fn post_simulation(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let mut doc = parse_body(&body)?;
    if let Some(obj) = doc.as_object_mut() {
        obj.entry("format").or_insert(json!(FORMAT_VERSION));
    }
    let file = simulation_from_value(&doc)?;
    let name = file.config.name.clone();
    let ws = s.snapshot();
    let progress = ProgressHandle::new();
    let sim = Simulation::new(
        &ws.topology,
        &ws.templates,
        &file.config,
        SimulationOptions {
            progress: Some(progress.clone()),
            ..Default::default()
        },
    )?;
    {
        let mut runs = s.0.runs.lock().expect("runs lock");
        let dir = s.0.config.output_root.join(&name);
        if runs.contains_key(&name) || dir.exists() {
            return Err(SerializationError::RunExists(dir).into());
        }
        runs.insert(
            name.clone(),
            RunEntry {
                status: RunStatus::Running,
                progress,
                report: None,
                error: None,
            },
        );
    }
    let inputs = RunInputs {
        topology: export_topology(&ws.topology),
        templates: export_templates(&ws.templates),
        simulation: export_simulation(&file),
    };
    let state = s.clone();
    let run_name = name.clone();
    tokio::spawn(async move {
        let permit = state.0.permits.clone().acquire_owned().await.expect("semaphore open");
        let root = state.0.config.output_root.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            let report = sim.run().map_err(|e| (e.code().to_string(), e.to_string()))?.report;
            write_results(&report, &root, &inputs, false).map_err(|e| (e.code().to_string(), e.to_string()))?;
            Ok::<_, (String, String)>(report)
        })
        .await
        .unwrap_or_else(|e| Err(("Internal".into(), e.to_string())));
        let mut runs = state.0.runs.lock().expect("runs lock");
        let entry = runs.get_mut(&run_name).expect("registered run");
        match outcome {
            Ok(report) => {
                entry.status = RunStatus::Done;
                entry.report = Some(report);
            }
            Err(err) => {
                entry.status = RunStatus::Failed;
                entry.error = Some(err);
            }
        }
    });
    Ok(json_value(StatusCode::ACCEPTED, json!({"name": name}), None))
}

fn run_entry(s: &AppState, name: &str) -> Result<RunEntry, ApiError> {
    s.0.runs
        .lock()
        .expect("runs lock")
        .get(name)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("simulation {name}")))
}

async fn get_progress(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult {
    let entry = run_entry(&s, &name)?;
    let progress = match entry.status {
        RunStatus::Done => 1.0,
        _ => entry.progress.get(),
    };
    Ok(json_value(
        StatusCode::OK,
        json!({"name": name, "status": entry.status.as_str(), "progress": progress}),
        None,
    ))
}

async fn get_results(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult {
    let entry = run_entry(&s, &name)?;
    match (entry.status, entry.report, entry.error) {
        (RunStatus::Done, Some(report), _) => Ok(json_text(StatusCode::OK, export_results(&report), None)),
        (RunStatus::Failed, _, Some((code, message))) => {
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, &code, None, message))
        }
        _ => Ok(json_value(
            StatusCode::ACCEPTED,
            json!({"name": name, "status": "Running", "progress": entry.progress.get()}),
            None,
        )),
    }
}

// ---------------------------------------------------------------------------
// Import / export
// ---------------------------------------------------------------------------

async fn export_doc(State(s): State<AppState>, Path(kind): Path<String>) -> ApiResult {
    let (text, v) = s.read(|ws| match kind.as_str() {
        "topology" => Ok(export_topology(&ws.topology)),
        "templates" => Ok(export_templates(&ws.templates)),
        "simulation" => ws
            .simulation
            .as_ref()
            .map(export_simulation)
            .ok_or_else(|| ApiError::not_found("simulation file")),
        other => Err(ApiError::not_found(format!("document kind {other}"))),
    });
    Ok(json_text(StatusCode::OK, text?, Some(v)))
}

async fn import_doc(
    State(s): State<AppState>,
    Path(kind): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad("ParseError", "$", e.to_string()))?;
    let (out, v) = s.mutate(&headers, |ws| match kind.as_str() {
        "topology" => {
            let topo = crate::serialization::import_topology_with(text, &ws.templates)?;
            ws.topology = topo;
            Ok(export_topology(&ws.topology))
        }
        "templates" => {
            let doc: Value =
                serde_json::from_str(text).map_err(|e| ApiError::bad("ParseError", "$", e.to_string()))?;
            let store = templates_from_value(&doc)?;
            store.check_nodes(&ws.topology)?;
            ws.templates = store;
            Ok(export_templates(&ws.templates))
        }
        "simulation" => {
            let file = import_simulation(text)?;
            let out = export_simulation(&file);
            ws.simulation = Some(file);
            Ok(out)
        }
        other => Err(ApiError::not_found(format!("document kind {other}"))),
    })?;
    Ok(json_text(StatusCode::OK, out, Some(v)))
}

/// All routes, plus the static UI when configured.
pub fn router(state: AppState) -> Router {
    let static_dir = state.0.config.static_dir.clone();
    let api = Router::new()
        .route("/api/topology", get(get_topology).put(put_topology))
        .route("/api/nodes", post(post_node))
        .route("/api/nodes/{name}", patch(patch_node))
        .route("/api/edges", post(post_edge))
        .route("/api/elements/{id}", axum::routing::delete(delete_element))
        .route("/api/legend", get(get_legend))
        .route("/api/matrices/{kind}", get(get_matrix).put(put_matrix))
        .route("/api/templates", get(get_templates))
        .route("/api/templates/{id}", put(put_template).delete(delete_template))
        .route("/api/layout", post(post_layout))
        .route("/api/simulations", post(post_simulation))
        .route("/api/simulations/{name}/progress", get(get_progress))
        .route("/api/simulations/{name}/results", get(get_results))
        .route("/api/export/{kind}", get(export_doc))
        .route("/api/import/{kind}", post(import_doc))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, workspace: Workspace, config: ServiceConfig) -> std::io::Result<()> {
    let app = router(AppState::new(workspace, config));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
