//! Typed, reusable parameter bundles applied to topology nodes.
//!
//! A store always keeps referential integrity: every router template names
//! an existing memory template and every BSM template an existing detector
//! template. Mutations are validated on a copy and only committed whole.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{BsmParams, DetectorParams, MemoryParams, Picos};
use crate::topology::{NodeSpec, NodeType, Topology};

pub const DEFAULT_ROUTER: &str = "default_router";
pub const DEFAULT_MEMORY: &str = "default_memory";
pub const DEFAULT_DETECTOR: &str = "default_detector";
pub const DEFAULT_BSM: &str = "default_bsm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateType {
    QuantumRouter,
    QuantumMemory,
    Detector,
    #[serde(rename = "BSM")]
    Bsm,
}

impl TemplateType {
    pub const ALL: [TemplateType; 4] = [
        TemplateType::QuantumRouter,
        TemplateType::QuantumMemory,
        TemplateType::Detector,
        TemplateType::Bsm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateType::QuantumRouter => "QuantumRouter",
            TemplateType::QuantumMemory => "QuantumMemory",
            TemplateType::Detector => "Detector",
            TemplateType::Bsm => "BSM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Node type a template of this type can be assigned to, if any.
    pub fn node_type(&self) -> Option<NodeType> {
        match self {
            TemplateType::QuantumRouter => Some(NodeType::QuantumRouter),
            TemplateType::Bsm => Some(NodeType::BsmNode),
            TemplateType::QuantumMemory | TemplateType::Detector => None,
        }
    }
}

impl fmt::Display for TemplateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTemplate {
    pub memory_array_size: u32,
    pub memory_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsmTemplate {
    pub detector_template: String,
    pub coincidence_window_ps: Picos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateParams {
    QuantumRouter(RouterTemplate),
    QuantumMemory(MemoryParams),
    Detector(DetectorParams),
    Bsm(BsmTemplate),
}

impl TemplateParams {
    pub fn template_type(&self) -> TemplateType {
        match self {
            TemplateParams::QuantumRouter(_) => TemplateType::QuantumRouter,
            TemplateParams::QuantumMemory(_) => TemplateType::QuantumMemory,
            TemplateParams::Detector(_) => TemplateType::Detector,
            TemplateParams::Bsm(_) => TemplateType::Bsm,
        }
    }

    /// Outgoing references as (field, target id, required type).
    fn references(&self) -> Option<(&'static str, &str, TemplateType)> {
        match self {
            TemplateParams::QuantumRouter(r) => {
                Some(("memory_template", r.memory_template.as_str(), TemplateType::QuantumMemory))
            }
            TemplateParams::Bsm(b) => Some(("detector_template", b.detector_template.as_str(), TemplateType::Detector)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: String,
    pub params: TemplateParams,
}

impl Template {
    pub fn new(id: impl Into<String>, params: TemplateParams) -> Self {
        Template { id: id.into(), params }
    }

    pub fn template_type(&self) -> TemplateType {
        self.params.template_type()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template `{id}` does not exist")]
    UnknownTemplate { id: String },
    #[error("{path}: reference to missing template `{target}`")]
    DanglingReference { path: String, target: String },
    #[error("{path}: expected a {expected} template, `{target}` is {found}")]
    ShapeMismatch {
        path: String,
        target: String,
        expected: String,
        found: String,
    },
    #[error("{path}: template references form a cycle through `{id}`")]
    CyclicReference { path: String, id: String },
    #[error("{path}: {reason}")]
    InvalidParameter { path: String, reason: String },
    #[error("template `{id}` is still used by {user}")]
    TemplateInUse { id: String, user: String },
}

impl TemplateError {
    pub fn code(&self) -> &'static str {
        match self {
            TemplateError::UnknownTemplate { .. } => "UnknownTemplate",
            TemplateError::DanglingReference { .. } => "DanglingReference",
            TemplateError::ShapeMismatch { .. } => "ShapeMismatch",
            TemplateError::CyclicReference { .. } => "CyclicReference",
            TemplateError::InvalidParameter { .. } => "InvalidParameter",
            TemplateError::TemplateInUse { .. } => "TemplateInUse",
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            TemplateError::DanglingReference { path, .. }
            | TemplateError::ShapeMismatch { path, .. }
            | TemplateError::CyclicReference { path, .. }
            | TemplateError::InvalidParameter { path, .. } => Some(path),
            TemplateError::UnknownTemplate { .. } | TemplateError::TemplateInUse { .. } => None,
        }
    }

    /// Re-roots the error path, e.g. under `templates[3]`.
    pub(crate) fn with_prefix(mut self, prefix: &str) -> Self {
        match &mut self {
            TemplateError::DanglingReference { path, .. }
            | TemplateError::ShapeMismatch { path, .. }
            | TemplateError::CyclicReference { path, .. }
            | TemplateError::InvalidParameter { path, .. } => *path = format!("{prefix}.{path}"),
            _ => {}
        }
        self
    }
}

/// Hardware parameters of one node after following template references.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedNode {
    Router { memory_array_size: usize, memory: MemoryParams },
    Bsm(BsmParams),
}

/// Ordered template collection keyed by id. Order is insertion order and
/// survives export/import.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    templates: Vec<Template>,
}

impl Default for TemplateStore {
    /// Store seeded with one default template per type.
    fn default() -> Self {
        TemplateStore {
            templates: vec![
                Template::new(
                    DEFAULT_MEMORY,
                    TemplateParams::QuantumMemory(MemoryParams {
                        coherence_time_s: 1.3,
                        frequency_hz: 2e4,
                        efficiency: 0.75,
                        fidelity: 0.9,
                    }),
                ),
                Template::new(
                    DEFAULT_ROUTER,
                    TemplateParams::QuantumRouter(RouterTemplate {
                        memory_array_size: 10,
                        memory_template: DEFAULT_MEMORY.into(),
                    }),
                ),
                Template::new(
                    DEFAULT_DETECTOR,
                    TemplateParams::Detector(DetectorParams {
                        efficiency: 0.9,
                        count_rate_hz: 2.5e7,
                        dark_count_rate_hz: 100.0,
                        time_resolution_ps: 100,
                    }),
                ),
                Template::new(
                    DEFAULT_BSM,
                    TemplateParams::Bsm(BsmTemplate {
                        detector_template: DEFAULT_DETECTOR.into(),
                        coincidence_window_ps: 200,
                    }),
                ),
            ],
        }
    }
}

impl TemplateStore {
    pub fn empty() -> Self {
        TemplateStore { templates: Vec::new() }
    }

    /// Builds a store from an ordered list, validating the whole set.
    pub fn from_templates(templates: Vec<Template>) -> Result<Self, TemplateError> {
        let store = TemplateStore { templates };
        store.validate()?;
        Ok(store)
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.iter()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Ids of templates of one type, in store order. Drives type-filtered
    /// template pickers.
    pub fn ids_of_type(&self, ty: TemplateType) -> Vec<&str> {
        self.templates
            .iter()
            .filter(|t| t.template_type() == ty)
            .map(|t| t.id.as_str())
            .collect()
    }

    /// Inserts or replaces a template by id. Every template and every
    /// topology node that refers to the id is re-validated against the new
    /// value; on error the store is unchanged.
    pub fn upsert(&mut self, template: Template, topo: &Topology) -> Result<(), TemplateError> {
        let mut next = self.clone();
        match next.templates.iter_mut().find(|t| t.id == template.id) {
            Some(slot) => *slot = template,
            None => next.templates.push(template),
        }
        next.validate()?;
        next.check_nodes(topo)?;
        *self = next;
        Ok(())
    }

    /// Removes a template nobody references.
    pub fn delete(&mut self, id: &str, topo: &Topology) -> Result<Template, TemplateError> {
        let idx = self
            .templates
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| TemplateError::UnknownTemplate { id: id.into() })?;
        if let Some(node) = topo.nodes().iter().find(|n| n.template_id == id) {
            return Err(TemplateError::TemplateInUse {
                id: id.into(),
                user: format!("node `{}`", node.name),
            });
        }
        if let Some(user) = self
            .templates
            .iter()
            .find(|t| t.params.references().is_some_and(|(_, target, _)| target == id))
        {
            return Err(TemplateError::TemplateInUse {
                id: id.into(),
                user: format!("template `{}`", user.id),
            });
        }
        Ok(self.templates.remove(idx))
    }

    /// Follows the node's template chain down to hardware parameters.
    pub fn resolve(&self, node: &NodeSpec) -> Result<ResolvedNode, TemplateError> {
        let template = self.get(&node.template_id).ok_or_else(|| TemplateError::DanglingReference {
            path: format!("node `{}`.template", node.name),
            target: node.template_id.clone(),
        })?;
        let expected = match node.node_type {
            NodeType::QuantumRouter => TemplateType::QuantumRouter,
            NodeType::BsmNode => TemplateType::Bsm,
        };
        if template.template_type() != expected {
            return Err(TemplateError::ShapeMismatch {
                path: format!("node `{}`.template", node.name),
                target: template.id.clone(),
                expected: expected.to_string(),
                found: template.template_type().to_string(),
            });
        }
        self.resolve_template(template)
    }

    pub(crate) fn resolve_template(&self, template: &Template) -> Result<ResolvedNode, TemplateError> {
        let missing = |field: &str, target: &str| TemplateError::DanglingReference {
            path: format!("{}.params.{field}", template.id),
            target: target.into(),
        };
        match &template.params {
            TemplateParams::QuantumRouter(r) => match self.get(&r.memory_template).map(|t| &t.params) {
                Some(TemplateParams::QuantumMemory(memory)) => Ok(ResolvedNode::Router {
                    memory_array_size: r.memory_array_size as usize,
                    memory: *memory,
                }),
                _ => Err(missing("memory_template", &r.memory_template)),
            },
            TemplateParams::Bsm(b) => match self.get(&b.detector_template).map(|t| &t.params) {
                Some(TemplateParams::Detector(detector)) => Ok(ResolvedNode::Bsm(BsmParams {
                    detector: *detector,
                    coincidence_window_ps: b.coincidence_window_ps,
                })),
                _ => Err(missing("detector_template", &b.detector_template)),
            },
            other => Err(TemplateError::ShapeMismatch {
                path: template.id.clone(),
                target: template.id.clone(),
                expected: "QuantumRouter or BSM".into(),
                found: other.template_type().to_string(),
            }),
        }
    }

    /// Full-store check: unique ids, parameter ranges, acyclic references
    /// that resolve to templates of the right type. Paths are rooted at
    /// `templates[i]`.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, t) in self.templates.iter().enumerate() {
            if index.insert(t.id.as_str(), i).is_some() {
                return Err(TemplateError::InvalidParameter {
                    path: format!("templates[{i}].id"),
                    reason: format!("duplicate template id `{}`", t.id),
                });
            }
        }
        for (i, t) in self.templates.iter().enumerate() {
            let root = format!("templates[{i}]");
            check_ranges(&t.params).map_err(|e| e.with_prefix(&root))?;
            self.check_cycle(i, &index).map_err(|e| e.with_prefix(&root))?;
            if let Some((field, target, required)) = t.params.references() {
                let path = format!("{root}.params.{field}");
                let Some(&j) = index.get(target) else {
                    return Err(TemplateError::DanglingReference {
                        path,
                        target: target.into(),
                    });
                };
                let found = self.templates[j].template_type();
                if found != required {
                    return Err(TemplateError::ShapeMismatch {
                        path,
                        target: target.into(),
                        expected: required.to_string(),
                        found: found.to_string(),
                    });
                }
            }
            if let TemplateParams::Bsm(b) = &t.params {
                if let ResolvedNode::Bsm(bsm) = self.resolve_template(t)? {
                    if b.coincidence_window_ps < bsm.detector.time_resolution_ps {
                        return Err(TemplateError::InvalidParameter {
                            path: format!("{root}.params.coincidence_window_ps"),
                            reason: format!(
                                "window {} ps is shorter than the detector resolution {} ps",
                                b.coincidence_window_ps, bsm.detector.time_resolution_ps
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_cycle(&self, start: usize, index: &HashMap<&str, usize>) -> Result<(), TemplateError> {
        let mut seen = BTreeSet::from([start]);
        let mut cur = start;
        while let Some((field, target, _)) = self.templates[cur].params.references() {
            let Some(&next) = index.get(target) else {
                return Ok(());
            };
            if !seen.insert(next) {
                let path = if cur == start {
                    format!("params.{field}")
                } else {
                    "id".to_string()
                };
                return Err(TemplateError::CyclicReference {
                    path,
                    id: self.templates[next].id.clone(),
                });
            }
            cur = next;
        }
        Ok(())
    }

    /// Every node's template exists and matches its node type.
    pub fn check_nodes(&self, topo: &Topology) -> Result<(), TemplateError> {
        for (i, node) in topo.nodes().iter().enumerate() {
            let path = format!("nodes[{i}].template");
            let Some(t) = self.get(&node.template_id) else {
                return Err(TemplateError::DanglingReference {
                    path,
                    target: node.template_id.clone(),
                });
            };
            if t.template_type().node_type() != Some(node.node_type) {
                return Err(TemplateError::ShapeMismatch {
                    path,
                    target: t.id.clone(),
                    expected: node.node_type.template_type().to_string(),
                    found: t.template_type().to_string(),
                });
            }
        }
        Ok(())
    }
}

fn check_ranges(params: &TemplateParams) -> Result<(), TemplateError> {
    fn bad(field: &str, reason: &str) -> TemplateError {
        TemplateError::InvalidParameter {
            path: format!("params.{field}"),
            reason: reason.into(),
        }
    }
    fn probability(field: &str, v: f64) -> Result<(), TemplateError> {
        if (0.0..=1.0).contains(&v) {
            Ok(())
        } else {
            Err(bad(field, "must lie in [0, 1]"))
        }
    }
    fn positive(field: &str, v: f64) -> Result<(), TemplateError> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(bad(field, "must be positive"))
        }
    }
    fn non_negative(field: &str, v: f64) -> Result<(), TemplateError> {
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(bad(field, "must be non-negative"))
        }
    }
    match params {
        TemplateParams::QuantumRouter(r) => {
            if r.memory_array_size == 0 {
                return Err(bad("memory_array_size", "must be at least 1"));
            }
        }
        TemplateParams::QuantumMemory(m) => {
            positive("coherence_time_s", m.coherence_time_s)?;
            positive("frequency_hz", m.frequency_hz)?;
            probability("efficiency", m.efficiency)?;
            probability("fidelity", m.fidelity)?;
        }
        TemplateParams::Detector(d) => {
            probability("efficiency", d.efficiency)?;
            non_negative("count_rate_hz", d.count_rate_hz)?;
            non_negative("dark_count_rate_hz", d.dark_count_rate_hz)?;
            if d.time_resolution_ps < 1 {
                return Err(bad("time_resolution_ps", "must be at least 1 ps"));
            }
        }
        TemplateParams::Bsm(_) => {}
    }
    Ok(())
}
