//! JSON files: topology, templates, simulation and results.
//!
//! Every file is UTF-8 JSON with two-space indentation, keys in a fixed
//! order, a trailing newline and a `"format": 1` version field. Exporting
//! the same model twice yields identical bytes, and exported text survives
//! an import/export cycle unchanged.
//!
//! Decoding is done by hand over [`serde_json::Value`] so that every error
//! carries the path of the offending element (`nodes[1].name`,
//! `templates[0].params.memory_template`, ...).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::hardware::{DetectorParams, MemoryParams, Picos};
use crate::randreq::{SimError, SimulationConfig, SimulationReport};
use crate::templates::{BsmTemplate, RouterTemplate, Template, TemplateError, TemplateParams, TemplateStore, TemplateType};
use crate::topology::{EdgeSpec, NodeSpec, NodeType, Topology};

pub const FORMAT_VERSION: u64 = 1;

pub const RESULTS_FILE: &str = "results.json";
pub const TOPOLOGY_FILE: &str = "topology.json";
pub const TEMPLATES_FILE: &str = "templates.json";
pub const SIMULATION_FILE: &str = "simulation.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerializationError {
    #[error("ParseError at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("SchemaError at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("InvariantViolation at {path}: {message}")]
    Invariant { path: String, message: String },
    #[error("{}: {}", .0.code(), .0)]
    Template(TemplateError),
    #[error("RunExists: {0} already exists")]
    RunExists(PathBuf),
    #[error("IoError at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl SerializationError {
    pub fn code(&self) -> &'static str {
        match self {
            SerializationError::Parse { .. } => "ParseError",
            SerializationError::Schema { .. } => "SchemaError",
            SerializationError::Invariant { .. } => "InvariantViolation",
            SerializationError::Template(e) => e.code(),
            SerializationError::RunExists(_) => "RunExists",
            SerializationError::Io { .. } => "IoError",
        }
    }

    /// Document path of the offending element, when there is one.
    pub fn path(&self) -> Option<String> {
        match self {
            SerializationError::Parse { .. } => Some("$".into()),
            SerializationError::Schema { path, .. } | SerializationError::Invariant { path, .. } => Some(path.clone()),
            SerializationError::Template(e) => e.path().map(String::from),
            SerializationError::RunExists(p) | SerializationError::Io { path: p, .. } => {
                Some(p.display().to_string())
            }
        }
    }
}

impl From<TemplateError> for SerializationError {
    fn from(e: TemplateError) -> Self {
        SerializationError::Template(e)
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SerializationError {
    SerializationError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn io_error(path: &Path, e: io::Error) -> SerializationError {
    SerializationError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn to_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values always serialize");
    s.push('\n');
    s
}

fn parse(text: &str) -> Result<Value, SerializationError> {
    serde_json::from_str(text).map_err(|e| SerializationError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn child(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// A JSON object being decoded, with its document path.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: impl Into<String>) -> Result<Self, SerializationError> {
        let path = path.into();
        match v.as_object() {
            Some(map) => Ok(Obj { map, path }),
            None => Err(schema(if path.is_empty() { "$".into() } else { path }, "expected an object")),
        }
    }

    /// Requires every key in `keys`; with `strict`, rejects any other key.
    fn expect_keys(&self, keys: &[&str], strict: bool) -> Result<(), SerializationError> {
        for k in keys {
            if !self.map.contains_key(*k) {
                return Err(schema(child(&self.path, k), "missing field"));
            }
        }
        if strict {
            if let Some(extra) = self.map.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(schema(child(&self.path, extra), "unknown field"));
            }
        }
        Ok(())
    }

    fn field(&self, key: &str) -> Result<&'a Value, SerializationError> {
        self.map
            .get(key)
            .ok_or_else(|| schema(child(&self.path, key), "missing field"))
    }

    fn at(&self, key: &str) -> String {
        child(&self.path, key)
    }

    fn str(&self, key: &str) -> Result<&'a str, SerializationError> {
        self.field(key)?
            .as_str()
            .ok_or_else(|| schema(self.at(key), "expected a string"))
    }

    fn f64(&self, key: &str) -> Result<f64, SerializationError> {
        self.field(key)?
            .as_f64()
            .ok_or_else(|| schema(self.at(key), "expected a number"))
    }

    fn u64(&self, key: &str) -> Result<u64, SerializationError> {
        as_count(self.field(key)?).ok_or_else(|| schema(self.at(key), "expected a non-negative integer"))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>, SerializationError> {
        self.field(key)?
            .as_array()
            .ok_or_else(|| schema(self.at(key), "expected an array"))
    }

    fn check_format(&self) -> Result<(), SerializationError> {
        match self.u64("format") {
            Ok(FORMAT_VERSION) => Ok(()),
            Ok(v) => Err(schema(self.at("format"), format!("unsupported format version {v}"))),
            Err(e) => Err(e),
        }
    }
}

fn as_count(v: &Value) -> Option<u64> {
    v.as_u64()
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

pub fn export_topology(topo: &Topology) -> String {
    let nodes: Vec<Value> = topo
        .nodes()
        .iter()
        .map(|n| json!({"name": n.name, "type": n.node_type.as_str(), "template": n.template_id}))
        .collect();
    let edges: Vec<Value> = topo
        .edges()
        .iter()
        .map(|e| json!({"a": e.a, "b": e.b, "distance_m": e.distance_m, "attenuation_db_km": e.attenuation_db_km}))
        .collect();
    to_text(&json!({
        "format": FORMAT_VERSION,
        "name": topo.name(),
        "nodes": nodes,
        "edges": edges,
        "cc_latency_ps": topo.cc_latency(),
        "qc_tdm": topo.qc_tdm(),
    }))
}

const TOPOLOGY_KEYS: [&str; 6] = ["format", "name", "nodes", "edges", "cc_latency_ps", "qc_tdm"];

/// Imports a topology file, checking structure and graph invariants.
/// Template references are checked by [`import_workspace`].
pub fn import_topology(text: &str) -> Result<Topology, SerializationError> {
    topology_from_value(&parse(text)?)
}

pub fn topology_from_value(doc: &Value) -> Result<Topology, SerializationError> {
    let root = Obj::new(doc, "")?;
    root.expect_keys(&TOPOLOGY_KEYS, true)?;
    root.check_format()?;
    let name = root.str("name")?.to_string();
    let mut nodes = Vec::new();
    for (i, v) in root.array("nodes")?.iter().enumerate() {
        let o = Obj::new(v, format!("nodes[{i}]"))?;
        o.expect_keys(&["name", "type", "template"], true)?;
        let ty = o.str("type")?;
        let node_type = NodeType::parse(ty)
            .ok_or_else(|| schema(o.at("type"), format!("unknown node type `{ty}`")))?;
        nodes.push(NodeSpec {
            name: o.str("name")?.to_string(),
            node_type,
            template_id: o.str("template")?.to_string(),
        });
    }
    let mut edges = Vec::new();
    for (k, v) in root.array("edges")?.iter().enumerate() {
        let o = Obj::new(v, format!("edges[{k}]"))?;
        o.expect_keys(&["a", "b", "distance_m", "attenuation_db_km"], true)?;
        edges.push(EdgeSpec {
            a: o.str("a")?.to_string(),
            b: o.str("b")?.to_string(),
            distance_m: o.f64("distance_m")?,
            attenuation_db_km: o.f64("attenuation_db_km")?,
        });
    }
    let n = nodes.len();
    let cc_latency = matrix(&root, "cc_latency_ps", n)?;
    let qc_tdm = matrix(&root, "qc_tdm", n)?;
    let topo = Topology::from_parts(name, nodes, edges, cc_latency, qc_tdm);
    topo.check_invariants()
        .map_err(|(path, message)| SerializationError::Invariant { path, message })?;
    Ok(topo)
}

fn matrix(root: &Obj, key: &str, n: usize) -> Result<Vec<Vec<u64>>, SerializationError> {
    let rows = root.array(key)?;
    if rows.len() != n {
        return Err(schema(key, format!("expected {n} rows for {n} nodes, found {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let row = row
                .as_array()
                .ok_or_else(|| schema(format!("{key}[{i}]"), "expected an array"))?;
            if row.len() != n {
                return Err(schema(key, format!("row {i} has {} entries, expected {n}", row.len())));
            }
            row.iter()
                .enumerate()
                .map(|(j, v)| {
                    as_count(v).ok_or_else(|| schema(format!("{key}[{i}][{j}]"), "expected a non-negative integer"))
                })
                .collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

fn template_params_value(params: &TemplateParams) -> Value {
    match params {
        TemplateParams::QuantumRouter(r) => json!({
            "memory_array_size": r.memory_array_size,
            "memory_template": r.memory_template,
        }),
        TemplateParams::QuantumMemory(m) => json!({
            "coherence_time_s": m.coherence_time_s,
            "frequency_hz": m.frequency_hz,
            "efficiency": m.efficiency,
            "fidelity": m.fidelity,
        }),
        TemplateParams::Detector(d) => json!({
            "efficiency": d.efficiency,
            "count_rate_hz": d.count_rate_hz,
            "dark_count_rate_hz": d.dark_count_rate_hz,
            "time_resolution_ps": d.time_resolution_ps,
        }),
        TemplateParams::Bsm(b) => json!({
            "detector_template": b.detector_template,
            "coincidence_window_ps": b.coincidence_window_ps,
        }),
    }
}

pub fn template_to_value(t: &Template) -> Value {
    json!({"id": t.id, "type": t.template_type().as_str(), "params": template_params_value(&t.params)})
}

pub fn export_templates(store: &TemplateStore) -> String {
    let templates: Vec<Value> = store.iter().map(template_to_value).collect();
    to_text(&json!({"format": FORMAT_VERSION, "templates": templates}))
}

pub fn import_templates(text: &str) -> Result<TemplateStore, SerializationError> {
    templates_from_value(&parse(text)?)
}

pub fn templates_from_value(doc: &Value) -> Result<TemplateStore, SerializationError> {
    let root = Obj::new(doc, "")?;
    root.expect_keys(&["format", "templates"], true)?;
    root.check_format()?;
    let templates = root
        .array("templates")?
        .iter()
        .enumerate()
        .map(|(i, v)| template_from_value(v, &format!("templates[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TemplateStore::from_templates(templates)?)
}

/// Decodes one `{"id", "type", "params"}` entry rooted at `path`.
pub fn template_from_value(v: &Value, path: &str) -> Result<Template, SerializationError> {
    let o = Obj::new(v, path)?;
    o.expect_keys(&["id", "type", "params"], true)?;
    let id = o.str("id")?.to_string();
    let ty = o.str("type")?;
    let ty = TemplateType::parse(ty).ok_or_else(|| schema(o.at("type"), format!("unknown template type `{ty}`")))?;
    let p = Obj::new(o.field("params")?, o.at("params"))?;
    let params = match ty {
        TemplateType::QuantumRouter => {
            p.expect_keys(&["memory_array_size", "memory_template"], true)?;
            let size = p.u64("memory_array_size")?;
            TemplateParams::QuantumRouter(RouterTemplate {
                memory_array_size: u32::try_from(size)
                    .map_err(|_| schema(p.at("memory_array_size"), "out of range"))?,
                memory_template: p.str("memory_template")?.to_string(),
            })
        }
        TemplateType::QuantumMemory => {
            p.expect_keys(&["coherence_time_s", "frequency_hz", "efficiency", "fidelity"], true)?;
            TemplateParams::QuantumMemory(MemoryParams {
                coherence_time_s: p.f64("coherence_time_s")?,
                frequency_hz: p.f64("frequency_hz")?,
                efficiency: p.f64("efficiency")?,
                fidelity: p.f64("fidelity")?,
            })
        }
        TemplateType::Detector => {
            p.expect_keys(&["efficiency", "count_rate_hz", "dark_count_rate_hz", "time_resolution_ps"], true)?;
            TemplateParams::Detector(DetectorParams {
                efficiency: p.f64("efficiency")?,
                count_rate_hz: p.f64("count_rate_hz")?,
                dark_count_rate_hz: p.f64("dark_count_rate_hz")?,
                time_resolution_ps: p.u64("time_resolution_ps")?,
            })
        }
        TemplateType::Bsm => {
            p.expect_keys(&["detector_template", "coincidence_window_ps"], true)?;
            TemplateParams::Bsm(BsmTemplate {
                detector_template: p.str("detector_template")?.to_string(),
                coincidence_window_ps: p.u64("coincidence_window_ps")? as Picos,
            })
        }
    };
    Ok(Template { id, params })
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// A simulation file: the run configuration plus any fields this version
/// does not know about, kept in their original order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationFile {
    pub config: SimulationConfig,
    pub extra: Map<String, Value>,
}

impl From<SimulationConfig> for SimulationFile {
    fn from(config: SimulationConfig) -> Self {
        SimulationFile {
            config,
            extra: Map::new(),
        }
    }
}

const SIMULATION_KEYS: [&str; 8] = [
    "format",
    "name",
    "duration_s",
    "seed",
    "request_rate_hz",
    "memories_per_request",
    "target_fidelity",
    "swap_success_prob",
];

pub fn export_simulation(file: &SimulationFile) -> String {
    let c = &file.config;
    let mut map = Map::new();
    map.insert("format".into(), json!(FORMAT_VERSION));
    map.insert("name".into(), json!(c.name));
    map.insert("duration_s".into(), json!(c.duration_s));
    map.insert("seed".into(), json!(c.seed));
    map.insert("request_rate_hz".into(), json!(c.request_rate_hz));
    map.insert("memories_per_request".into(), json!(c.memories_per_request));
    map.insert("target_fidelity".into(), json!(c.target_fidelity));
    map.insert("swap_success_prob".into(), json!(c.swap_success_prob));
    for (k, v) in &file.extra {
        if !SIMULATION_KEYS.contains(&k.as_str()) {
            map.insert(k.clone(), v.clone());
        }
    }
    to_text(&Value::Object(map))
}

pub fn import_simulation(text: &str) -> Result<SimulationFile, SerializationError> {
    simulation_from_value(&parse(text)?)
}

pub fn simulation_from_value(doc: &Value) -> Result<SimulationFile, SerializationError> {
    let root = Obj::new(doc, "")?;
    root.expect_keys(&SIMULATION_KEYS, false)?;
    root.check_format()?;
    let memories = root.u64("memories_per_request")?;
    let config = SimulationConfig {
        name: root.str("name")?.to_string(),
        duration_s: root.f64("duration_s")?,
        seed: root.u64("seed")?,
        request_rate_hz: root.f64("request_rate_hz")?,
        memories_per_request: u32::try_from(memories).map_err(|_| schema("memories_per_request", "out of range"))?,
        target_fidelity: root.f64("target_fidelity")?,
        swap_success_prob: root.f64("swap_success_prob")?,
    };
    config.validate().map_err(|e| match e {
        SimError::InvalidConfig { field, reason } => schema(field, reason),
        other => schema("$", other.to_string()),
    })?;
    let extra = root
        .map
        .iter()
        .filter(|(k, _)| !SIMULATION_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(SimulationFile { config, extra })
}

// ---------------------------------------------------------------------------
// Workspace
// ---------------------------------------------------------------------------

/// The files that together describe a reproducible network.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceFiles {
    pub topology: Topology,
    pub templates: TemplateStore,
    pub simulation: Option<SimulationFile>,
}

/// Imports a topology against a template store; every node's template must
/// exist and match the node's type.
pub fn import_topology_with(text: &str, templates: &TemplateStore) -> Result<Topology, SerializationError> {
    let topo = import_topology(text)?;
    templates.check_nodes(&topo)?;
    Ok(topo)
}

pub fn import_workspace(
    topology: &str,
    templates: &str,
    simulation: Option<&str>,
) -> Result<WorkspaceFiles, SerializationError> {
    let templates = import_templates(templates)?;
    let topology = import_topology_with(topology, &templates)?;
    let simulation = simulation.map(import_simulation).transpose()?;
    Ok(WorkspaceFiles {
        topology,
        templates,
        simulation,
    })
}

/// Reads a file; the error names the path.
pub fn read_file(path: &Path) -> Result<String, SerializationError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Positions file written by the `layout` command.
pub fn export_layout(result: &crate::layout::LayoutResult) -> String {
    let positions: Vec<Value> = result
        .positions
        .iter()
        .map(|p| json!({"name": p.name, "x": p.x, "y": p.y}))
        .collect();
    to_text(&json!({
        "format": FORMAT_VERSION,
        "iterations_used": result.iterations_used,
        "converged": result.converged,
        "positions": positions,
    }))
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

pub fn export_results(report: &SimulationReport) -> String {
    let mut value = serde_json::to_value(report).expect("reports always serialize");
    let fields = value.as_object_mut().expect("report is an object");
    let mut map = Map::new();
    map.insert("format".into(), json!(FORMAT_VERSION));
    map.extend(std::mem::take(fields));
    to_text(&Value::Object(map))
}

pub fn import_results(text: &str) -> Result<SimulationReport, SerializationError> {
    let mut doc = parse(text)?;
    let root = Obj::new(&doc, "")?;
    root.expect_keys(&["format", "name", "duration_s", "nodes", "totals"], true)?;
    root.check_format()?;
    doc.as_object_mut().expect("object").remove("format");
    serde_json::from_value(doc).map_err(|e| schema("$", e.to_string()))
}

/// Exported text of the three inputs to a run, copied next to its results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInputs {
    pub topology: String,
    pub templates: String,
    pub simulation: String,
}

/// Writes `<output_root>/<name>/` with the results and input copies.
/// An existing run directory is only replaced when `force` is set.
pub fn write_results(
    report: &SimulationReport,
    output_root: &Path,
    inputs: &RunInputs,
    force: bool,
) -> Result<PathBuf, SerializationError> {
    if !crate::randreq::is_safe_name(&report.name) {
        return Err(schema("name", format!("`{}` is not a safe run name", report.name)));
    }
    fs::create_dir_all(output_root).map_err(|e| io_error(output_root, e))?;
    let dir = output_root.join(&report.name);
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            if !force {
                return Err(SerializationError::RunExists(dir));
            }
            fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            fs::create_dir(&dir).map_err(|e| io_error(&dir, e))?;
        }
        Err(e) => return Err(io_error(&dir, e)),
    }
    let files = [
        (RESULTS_FILE, export_results(report)),
        (TOPOLOGY_FILE, inputs.topology.clone()),
        (TEMPLATES_FILE, inputs.templates.clone()),
        (SIMULATION_FILE, inputs.simulation.clone()),
    ];
    for (file, text) in files {
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    }
    Ok(dir)
}
