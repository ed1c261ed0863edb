//! Network graph: named nodes joined by dual-channel (classical + quantum)
//! edges, plus the classical latency and quantum TDM adjacency matrices.
//!
//! Users only ever add quantum routers. Connecting two routers inserts a
//! Bell state measurement node halfway between them, so every stored edge
//! is one half of a router–BSM–router link.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{ChannelParams, Picos};
use crate::templates::{TemplateStore, TemplateType, DEFAULT_BSM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    QuantumRouter,
    #[serde(rename = "BSMNode")]
    BsmNode,
}

impl NodeType {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeType::QuantumRouter => "QuantumRouter",
            NodeType::BsmNode => "BSMNode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "QuantumRouter" => Some(NodeType::QuantumRouter),
            "BSMNode" => Some(NodeType::BsmNode),
            _ => None,
        }
    }

    pub fn template_type(&self) -> TemplateType {
        match self {
            NodeType::QuantumRouter => TemplateType::QuantumRouter,
            NodeType::BsmNode => TemplateType::Bsm,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub node_type: NodeType,
    pub template_id: String,
}

impl NodeSpec {
    pub fn router(name: impl Into<String>, template_id: impl Into<String>) -> Self {
        NodeSpec {
            name: name.into(),
            node_type: NodeType::QuantumRouter,
            template_id: template_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    pub distance_m: f64,
    pub attenuation_db_km: f64,
}

impl EdgeSpec {
    pub fn connects(&self, x: &str, y: &str) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn touches(&self, x: &str) -> bool {
        self.a == x || self.b == x
    }

    pub fn other(&self, x: &str) -> Option<&str> {
        if self.a == x {
            Some(&self.b)
        } else if self.b == x {
            Some(&self.a)
        } else {
            None
        }
    }

    pub fn channel(&self) -> ChannelParams {
        ChannelParams::new(self.distance_m, self.attenuation_db_km)
    }
}

/// Node types currently present, in display order.
pub type Legend = BTreeSet<NodeType>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    #[serde(rename = "cc_latency")]
    CcLatency,
    #[serde(rename = "qc_tdm")]
    QcTdm,
}

impl MatrixKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cc_latency" => Some(MatrixKind::CcLatency),
            "qc_tdm" => Some(MatrixKind::QcTdm),
            _ => None,
        }
    }
}

/// Identifies a node or an edge for removal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElementId {
    Node(String),
    Edge(String, String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("a node named `{0}` already exists")]
    DuplicateName(String),
    #[error("template `{0}` does not exist")]
    UnknownTemplate(String),
    #[error("template `{template}` ({found}) cannot be used for a {node_type} node")]
    TemplateTypeMismatch {
        template: String,
        node_type: NodeType,
        found: TemplateType,
    },
    #[error("{0}")]
    ReservedType(String),
    #[error("no node named `{0}`")]
    UnknownEndpoint(String),
    #[error("edge would connect `{0}` to itself")]
    SelfLoop(String),
    #[error("`{0}` and `{1}` are already connected")]
    DuplicateEdge(String, String),
    #[error("no element `{0}`")]
    UnknownElement(String),
    #[error("{field} must be non-negative, got {value}")]
    NegativeValue { field: &'static str, value: f64 },
    #[error("{field} must be an integer, got {value}")]
    NonIntegral { field: &'static str, value: f64 },
    #[error("the classical latency diagonal is fixed at zero")]
    DiagonalWrite,
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
}

impl TopologyError {
    pub fn code(&self) -> &'static str {
        match self {
            TopologyError::DuplicateName(_) => "DuplicateName",
            TopologyError::UnknownTemplate(_) => "UnknownTemplate",
            TopologyError::TemplateTypeMismatch { .. } => "TemplateTypeMismatch",
            TopologyError::ReservedType(_) => "ReservedType",
            TopologyError::UnknownEndpoint(_) => "UnknownEndpoint",
            TopologyError::SelfLoop(_) => "SelfLoop",
            TopologyError::DuplicateEdge(..) => "DuplicateEdge",
            TopologyError::UnknownElement(_) => "UnknownElement",
            TopologyError::NegativeValue { .. } => "NegativeValue",
            TopologyError::NonIntegral { .. } => "NonIntegral",
            TopologyError::DiagonalWrite => "DiagonalWrite",
            TopologyError::InvalidMatrix(_) => "InvalidMatrix",
        }
    }

    /// Request field the error refers to.
    pub fn path(&self) -> &'static str {
        match self {
            TopologyError::DuplicateName(_) | TopologyError::UnknownElement(_) => "name",
            TopologyError::UnknownTemplate(_) | TopologyError::TemplateTypeMismatch { .. } => "template",
            TopologyError::ReservedType(_) => "type",
            TopologyError::UnknownEndpoint(_)
            | TopologyError::SelfLoop(_)
            | TopologyError::DuplicateEdge(..) => "b",
            TopologyError::NegativeValue { .. }
            | TopologyError::NonIntegral { .. }
            | TopologyError::DiagonalWrite => "value",
            TopologyError::InvalidMatrix(_) => "matrix",
        }
    }
}

/// Node edit; absent fields are left alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePatch {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub node_type: Option<NodeType>,
    #[serde(rename = "template", default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

/// Name of the BSM node inserted between routers `a` and `b`.
pub fn bsm_name(a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("bsm.{lo}.{hi}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Topology {
    name: String,
    nodes: Vec<NodeSpec>,
    edges: Vec<EdgeSpec>,
    cc_latency: Vec<Vec<Picos>>,
    qc_tdm: Vec<Vec<u64>>,
}

impl Topology {
    pub fn new(name: impl Into<String>) -> Self {
        Topology {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Assembles a topology from raw parts without validation. Callers
    /// are expected to run [`Topology::check_invariants`].
    pub(crate) fn from_parts(
        name: String,
        nodes: Vec<NodeSpec>,
        edges: Vec<EdgeSpec>,
        cc_latency: Vec<Vec<Picos>>,
        qc_tdm: Vec<Vec<u64>>,
    ) -> Self {
        Topology {
            name,
            nodes,
            edges,
            cc_latency,
            qc_tdm,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.edges
    }

    pub fn cc_latency(&self) -> &[Vec<Picos>] {
        &self.cc_latency
    }

    pub fn qc_tdm(&self) -> &[Vec<u64>] {
        &self.qc_tdm
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<&EdgeSpec> {
        self.edges.iter().find(|e| e.connects(a, b))
    }

    pub fn routers(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.node_type == NodeType::QuantumRouter)
    }

    pub fn neighbors<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter_map(move |e| e.other(name))
    }

    /// The two routers a BSM node links, ordered by name.
    pub fn bsm_endpoints(&self, bsm: &str) -> Option<(&str, &str)> {
        let node = self.node(bsm)?;
        if node.node_type != NodeType::BsmNode {
            return None;
        }
        let mut ends: Vec<&str> = self
            .edges
            .iter()
            .filter_map(|e| match (e.a == bsm, e.b == bsm) {
                (true, false) => Some(e.b.as_str()),
                (false, true) => Some(e.a.as_str()),
                _ => None,
            })
            .collect();
        ends.sort_unstable();
        match ends.as_slice() {
            [a, b] => Some((a, b)),
            _ => None,
        }
    }

    /// Router pairs joined through a BSM node.
    pub fn router_links(&self) -> Vec<(&str, &str, &str)> {
        self.nodes
            .iter()
            .filter(|n| n.node_type == NodeType::BsmNode)
            .filter_map(|n| self.bsm_endpoints(&n.name).map(|(a, b)| (a, b, n.name.as_str())))
            .collect()
    }

    fn check_template(
        templates: &TemplateStore,
        node_type: NodeType,
        template_id: &str,
    ) -> Result<(), TopologyError> {
        let template = templates
            .get(template_id)
            .ok_or_else(|| TopologyError::UnknownTemplate(template_id.into()))?;
        if template.template_type() != node_type.template_type() {
            return Err(TopologyError::TemplateTypeMismatch {
                template: template_id.into(),
                node_type,
                found: template.template_type(),
            });
        }
        Ok(())
    }

    fn push_node(&mut self, node: NodeSpec) {
        for row in &mut self.cc_latency {
            row.push(0);
        }
        for row in &mut self.qc_tdm {
            row.push(0);
        }
        self.nodes.push(node);
        let n = self.nodes.len();
        self.cc_latency.push(vec![0; n]);
        self.qc_tdm.push(vec![0; n]);
    }

    fn remove_node_at(&mut self, idx: usize) -> NodeSpec {
        for row in &mut self.cc_latency {
            row.remove(idx);
        }
        for row in &mut self.qc_tdm {
            row.remove(idx);
        }
        self.cc_latency.remove(idx);
        self.qc_tdm.remove(idx);
        let node = self.nodes.remove(idx);
        self.edges.retain(|e| !e.touches(&node.name));
        node
    }

    pub fn add_node(
        &mut self,
        templates: &TemplateStore,
        name: &str,
        node_type: NodeType,
        template_id: &str,
    ) -> Result<(), TopologyError> {
        if self.node(name).is_some() {
            return Err(TopologyError::DuplicateName(name.into()));
        }
        if node_type == NodeType::BsmNode {
            return Err(TopologyError::ReservedType(
                "BSM nodes are created by connecting two routers".into(),
            ));
        }
        Self::check_template(templates, node_type, template_id)?;
        self.push_node(NodeSpec {
            name: name.into(),
            node_type,
            template_id: template_id.into(),
        });
        Ok(())
    }

    /// Connects two routers through a new midpoint BSM node.
    pub fn add_edge(
        &mut self,
        templates: &TemplateStore,
        a: &str,
        b: &str,
        distance_m: f64,
        attenuation_db_km: f64,
    ) -> Result<(), TopologyError> {
        for x in [a, b] {
            if self.node(x).is_none() {
                return Err(TopologyError::UnknownEndpoint(x.into()));
            }
        }
        if a == b {
            return Err(TopologyError::SelfLoop(a.into()));
        }
        if self.edge_between(a, b).is_some() || self.routers_linked(a, b) {
            return Err(TopologyError::DuplicateEdge(a.into(), b.into()));
        }
        for (field, value) in [("distance_m", distance_m), ("attenuation_db_km", attenuation_db_km)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(TopologyError::NegativeValue { field, value });
            }
        }
        let both_routers = [a, b]
            .iter()
            .all(|x| self.node(x).map(|n| n.node_type) == Some(NodeType::QuantumRouter));
        if !both_routers {
            return Err(TopologyError::ReservedType(
                "BSM nodes only attach to the two routers they link".into(),
            ));
        }
        let bsm = bsm_name(a, b);
        if self.node(&bsm).is_some() {
            return Err(TopologyError::DuplicateName(bsm));
        }
        Self::check_template(templates, NodeType::BsmNode, DEFAULT_BSM)?;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.push_node(NodeSpec {
            name: bsm.clone(),
            node_type: NodeType::BsmNode,
            template_id: DEFAULT_BSM.into(),
        });
        for (x, y) in [(lo, bsm.as_str()), (bsm.as_str(), hi)] {
            self.edges.push(EdgeSpec {
                a: x.into(),
                b: y.into(),
                distance_m: distance_m / 2.0,
                attenuation_db_km,
            });
        }
        Ok(())
    }

    fn routers_linked(&self, a: &str, b: &str) -> bool {
        self.node(&bsm_name(a, b))
            .is_some_and(|n| n.node_type == NodeType::BsmNode && self.bsm_endpoints(&n.name) == Some(ordered(a, b)))
    }

    /// Resolves a user-facing id: a node name, or `a--b` / `a|b` naming
    /// an edge or a router pair.
    pub fn parse_element(&self, id: &str) -> Option<ElementId> {
        if self.node(id).is_some() {
            return Some(ElementId::Node(id.into()));
        }
        for sep in ["--", "|"] {
            for (pos, _) in id.match_indices(sep) {
                let (a, b) = (&id[..pos], &id[pos + sep.len()..]);
                if self.node(a).is_some() && self.node(b).is_some() {
                    return Some(ElementId::Edge(a.into(), b.into()));
                }
            }
        }
        None
    }

    /// Removes a node (with its incident edges) or an edge. Any BSM node
    /// left without both of its half-edges is removed with them.
    pub fn remove_element(&mut self, id: &ElementId) -> Result<(), TopologyError> {
        let doomed_bsm: Vec<String> = match id {
            ElementId::Node(name) => {
                let node = self
                    .node(name)
                    .ok_or_else(|| TopologyError::UnknownElement(name.clone()))?;
                let mut bsms: Vec<String> = self
                    .neighbors(name)
                    .filter(|n| self.node(n).is_some_and(|x| x.node_type == NodeType::BsmNode))
                    .map(String::from)
                    .collect();
                if node.node_type == NodeType::BsmNode {
                    bsms.push(name.clone());
                } else {
                    let idx = self.index_of(name).expect("present");
                    self.remove_node_at(idx);
                }
                bsms
            }
            ElementId::Edge(a, b) => {
                if let Some(edge) = self.edge_between(a, b) {
                    let bsm = [&edge.a, &edge.b]
                        .into_iter()
                        .find(|x| self.node(x).is_some_and(|n| n.node_type == NodeType::BsmNode))
                        .cloned();
                    match bsm {
                        Some(bsm) => vec![bsm],
                        None => {
                            self.edges.retain(|e| !e.connects(a, b));
                            Vec::new()
                        }
                    }
                } else if self.routers_linked(a, b) {
                    vec![bsm_name(a, b)]
                } else {
                    return Err(TopologyError::UnknownElement(format!("{a}--{b}")));
                }
            }
        };
        for bsm in doomed_bsm {
            if let Some(idx) = self.index_of(&bsm) {
                self.remove_node_at(idx);
            }
        }
        Ok(())
    }

    /// Atomically retargets a node's type and/or template.
    pub fn edit_node(
        &mut self,
        templates: &TemplateStore,
        name: &str,
        patch: &NodePatch,
    ) -> Result<(), TopologyError> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| TopologyError::UnknownElement(name.into()))?;
        let current = &self.nodes[idx];
        let node_type = patch.node_type.unwrap_or(current.node_type);
        let template_id = patch.template_id.clone().unwrap_or_else(|| current.template_id.clone());
        Self::check_template(templates, node_type, &template_id)?;
        if node_type != current.node_type {
            return Err(TopologyError::ReservedType(
                "BSM nodes exist only between connected routers; node types cannot be switched".into(),
            ));
        }
        self.nodes[idx].template_id = template_id;
        Ok(())
    }

    /// Writes a symmetric matrix entry. Latency in ps, TDM in frames.
    pub fn set_matrix_entry(&mut self, kind: MatrixKind, i: &str, j: &str, value: f64) -> Result<(), TopologyError> {
        let ii = self.index_of(i).ok_or_else(|| TopologyError::UnknownElement(i.into()))?;
        let jj = self.index_of(j).ok_or_else(|| TopologyError::UnknownElement(j.into()))?;
        let field = match kind {
            MatrixKind::CcLatency => "cc_latency",
            MatrixKind::QcTdm => "qc_tdm",
        };
        if !(value >= 0.0) || !value.is_finite() {
            return Err(TopologyError::NegativeValue { field, value });
        }
        match kind {
            MatrixKind::CcLatency => {
                if ii == jj {
                    return Err(TopologyError::DiagonalWrite);
                }
                let v = value.round() as Picos;
                self.cc_latency[ii][jj] = v;
                self.cc_latency[jj][ii] = v;
            }
            MatrixKind::QcTdm => {
                if value.fract() != 0.0 {
                    return Err(TopologyError::NonIntegral { field, value });
                }
                let v = value as u64;
                self.qc_tdm[ii][jj] = v;
                self.qc_tdm[jj][ii] = v;
            }
        }
        Ok(())
    }

    /// Replaces a whole matrix; all-or-nothing.
    pub fn set_matrix(&mut self, kind: MatrixKind, matrix: &[Vec<f64>]) -> Result<(), TopologyError> {
        let n = self.nodes.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(TopologyError::InvalidMatrix(format!("expected {n}x{n}")));
        }
        let mut next = self.clone();
        for i in 0..n {
            for j in 0..n {
                let v = matrix[i][j];
                if v != matrix[j][i] {
                    return Err(TopologyError::InvalidMatrix(format!("asymmetric entry ({i},{j})")));
                }
                if i == j && kind == MatrixKind::CcLatency {
                    if v != 0.0 {
                        return Err(TopologyError::DiagonalWrite);
                    }
                    continue;
                }
                let (a, b) = (next.nodes[i].name.clone(), next.nodes[j].name.clone());
                next.set_matrix_entry(kind, &a, &b, v)?;
            }
        }
        *self = next;
        Ok(())
    }

    /// Classical one-way delay between two adjacent nodes: the latency
    /// table entry when set, the fiber time of flight otherwise.
    pub fn classical_delay(&self, a: &str, b: &str) -> Option<Picos> {
        let edge = self.edge_between(a, b)?;
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        Some(match self.cc_latency[i][j] {
            0 => edge.channel().propagation_delay(),
            v => v,
        })
    }

    pub fn legend(&self) -> Legend {
        self.nodes.iter().map(|n| n.node_type).collect()
    }

    /// Checks every structural invariant. The error carries a document
    /// path into the exported form (`nodes[i].name`, `edges[k].b`, ...).
    pub fn check_invariants(&self) -> Result<(), (String, String)> {
        let fail = |path: String, msg: String| Err((path, msg));
        let mut names = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !names.insert(n.name.as_str()) {
                return fail(format!("nodes[{i}].name"), format!("duplicate node name `{}`", n.name));
            }
        }
        let mut pairs = BTreeSet::new();
        for (k, e) in self.edges.iter().enumerate() {
            for (end, name) in [("a", &e.a), ("b", &e.b)] {
                if self.node(name).is_none() {
                    return fail(format!("edges[{k}].{end}"), format!("unknown endpoint `{name}`"));
                }
            }
            if e.a == e.b {
                return fail(format!("edges[{k}].b"), "self loop".into());
            }
            if !pairs.insert(ordered(&e.a, &e.b)) {
                return fail(format!("edges[{k}]"), "duplicate edge".into());
            }
            for (field, v) in [("distance_m", e.distance_m), ("attenuation_db_km", e.attenuation_db_km)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return fail(format!("edges[{k}].{field}"), "must be non-negative".into());
                }
            }
            let types = [&e.a, &e.b].map(|x| self.node(x).map(|n| n.node_type));
            if types[0] == types[1] {
                return fail(
                    format!("edges[{k}]"),
                    "edges must join a router and a BSM node".into(),
                );
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_type != NodeType::BsmNode {
                continue;
            }
            match self.bsm_endpoints(&n.name) {
                Some((a, b)) if n.name == bsm_name(a, b) => {}
                Some(_) => {
                    return fail(
                        format!("nodes[{i}].name"),
                        "BSM node name must be bsm.<router>.<router>".into(),
                    )
                }
                None => {
                    return fail(
                        format!("nodes[{i}]"),
                        "BSM node must have exactly two router neighbours".into(),
                    )
                }
            }
        }
        let n = self.nodes.len();
        let square = |m: usize, rows: &Vec<usize>| m == n && rows.iter().all(|&r| r == n);
        let cc_rows: Vec<usize> = self.cc_latency.iter().map(Vec::len).collect();
        if !square(self.cc_latency.len(), &cc_rows) {
            return fail("cc_latency_ps".into(), format!("expected a {n}x{n} matrix"));
        }
        let tdm_rows: Vec<usize> = self.qc_tdm.iter().map(Vec::len).collect();
        if !square(self.qc_tdm.len(), &tdm_rows) {
            return fail("qc_tdm".into(), format!("expected a {n}x{n} matrix"));
        }
        for i in 0..n {
            if self.cc_latency[i][i] != 0 {
                return fail(format!("cc_latency_ps[{i}][{i}]"), "diagonal must be zero".into());
            }
            for j in 0..n {
                if self.cc_latency[i][j] != self.cc_latency[j][i] {
                    return fail(format!("cc_latency_ps[{i}][{j}]"), "matrix must be symmetric".into());
                }
                if self.qc_tdm[i][j] != self.qc_tdm[j][i] {
                    return fail(format!("qc_tdm[{i}][{j}]"), "matrix must be symmetric".into());
                }
            }
        }
        Ok(())
    }
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
