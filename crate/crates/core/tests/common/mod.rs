#![allow(dead_code)]

pub mod docs;

use std::path::PathBuf;

use qnet::hardware::{DetectorParams, MemoryParams};
use qnet::randreq::SimulationConfig;
use qnet::serialization::SimulationFile;
use qnet::templates::{
    BsmTemplate, RouterTemplate, Template, TemplateParams, TemplateStore, DEFAULT_ROUTER,
};
use qnet::topology::{MatrixKind, NodeType, Topology};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn sim_config(name: &str, duration_s: f64, seed: u64, rate: f64) -> SimulationConfig {
    SimulationConfig {
        name: name.into(),
        duration_s,
        seed,
        request_rate_hz: rate,
        memories_per_request: 1,
        target_fidelity: 0.5,
        swap_success_prob: 0.5,
    }
}

/// Routers joined by `links` (index pairs), all with the given template.
pub fn network(
    name: &str,
    store: &TemplateStore,
    routers: &[&str],
    router_template: &str,
    links: &[(usize, usize, f64)],
) -> Topology {
    let mut topo = Topology::new(name);
    for r in routers {
        topo.add_node(store, r, NodeType::QuantumRouter, router_template).unwrap();
    }
    for &(a, b, d) in links {
        topo.add_edge(store, routers[a], routers[b], d, 0.2).unwrap();
    }
    topo
}

pub fn line(n: usize, spacing_m: f64) -> (Topology, TemplateStore) {
    let store = TemplateStore::default();
    let names: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let links: Vec<_> = (1..n).map(|i| (i - 1, i, spacing_m)).collect();
    (network("line", &store, &refs, DEFAULT_ROUTER, &links), store)
}

pub fn triangle(side_m: f64) -> (Topology, TemplateStore) {
    let store = TemplateStore::default();
    let topo = network("triangle", &store, &["a", "b", "c"], DEFAULT_ROUTER, &[(0, 1, side_m), (1, 2, side_m), (0, 2, side_m)]);
    (topo, store)
}

/// Default store plus a fast memory, a small router and a second BSM.
pub fn custom_store() -> TemplateStore {
    let mut templates: Vec<Template> = TemplateStore::default().iter().cloned().collect();
    templates.push(Template::new(
        "fast_memory",
        TemplateParams::QuantumMemory(MemoryParams {
            coherence_time_s: 0.25,
            frequency_hz: 1e5,
            efficiency: 0.95,
            fidelity: 0.97,
        }),
    ));
    templates.push(Template::new(
        "small_router",
        TemplateParams::QuantumRouter(RouterTemplate {
            memory_array_size: 4,
            memory_template: "fast_memory".into(),
        }),
    ));
    templates.push(Template::new(
        "quiet_detector",
        TemplateParams::Detector(DetectorParams {
            efficiency: 0.8,
            count_rate_hz: 5e7,
            dark_count_rate_hz: 1.5,
            time_resolution_ps: 50,
        }),
    ));
    templates.push(Template::new(
        "quiet_bsm",
        TemplateParams::Bsm(BsmTemplate {
            detector_template: "quiet_detector".into(),
            coincidence_window_ps: 150,
        }),
    ));
    TemplateStore::from_templates(templates).unwrap()
}

pub struct FixtureWorkspace {
    pub name: &'static str,
    pub topology: Topology,
    pub templates: TemplateStore,
    pub simulation: SimulationFile,
}

/// The five reference workspaces behind the golden files.
pub fn fixture_workspaces() -> Vec<FixtureWorkspace> {
    let mut out = Vec::new();

    out.push(FixtureWorkspace {
        name: "empty",
        topology: Topology::new(""),
        templates: TemplateStore::default(),
        simulation: sim_config("empty", 1.0, 0, 0.0).into(),
    });

    let store = TemplateStore::default();
    out.push(FixtureWorkspace {
        name: "pair",
        topology: network("pair", &store, &["r1", "r2"], DEFAULT_ROUTER, &[(0, 1, 10_000.0)]),
        templates: store,
        simulation: sim_config("pair", 10.0, 7, 5.0).into(),
    });

    let (mut topo, store) = line(4, 2_500.0);
    topo.set_name("metro line");
    topo.set_matrix_entry(MatrixKind::CcLatency, "r0", "r3", 37_500_000.0).unwrap();
    topo.set_matrix_entry(MatrixKind::QcTdm, "r1", "r2", 3.0).unwrap();
    out.push(FixtureWorkspace {
        name: "line4",
        topology: topo,
        templates: store,
        simulation: sim_config("line4", 10.0, 42, 5.0).into(),
    });

    let store = custom_store();
    let mut topo = network(
        "triangle",
        &store,
        &["alice", "bob", "charlie"],
        "small_router",
        &[(0, 1, 1_234.5), (1, 2, 800.0), (2, 0, 0.0)],
    );
    topo.edit_node(
        &store,
        "bsm.alice.bob",
        &qnet::topology::NodePatch {
            node_type: None,
            template_id: Some("quiet_bsm".into()),
        },
    )
    .unwrap();
    let mut sim: SimulationFile = SimulationConfig {
        memories_per_request: 2,
        target_fidelity: 0.8,
        swap_success_prob: 0.9,
        ..sim_config("triangle", 2.5, 1, 12.5)
    }
    .into();
    sim.extra.insert("notes".into(), serde_json::json!("fast memories"));
    out.push(FixtureWorkspace {
        name: "triangle",
        topology: topo,
        templates: store,
        simulation: sim,
    });

    let store = custom_store();
    let mut topo = network(
        "star",
        &store,
        &["hub", "n1", "n2", "n3", "n4"],
        DEFAULT_ROUTER,
        &[(0, 1, 5e3), (0, 2, 7.25e3), (0, 3, 1e4), (0, 4, 12.125e3)],
    );
    topo.edit_node(
        &store,
        "n4",
        &qnet::topology::NodePatch {
            node_type: None,
            template_id: Some("small_router".into()),
        },
    )
    .unwrap();
    topo.set_matrix_entry(MatrixKind::CcLatency, "n1", "n2", 1e6).unwrap();
    let mut sim: SimulationFile = sim_config("star", 5.0, 99, 3.0).into();
    sim.extra.insert("benchmark".into(), serde_json::json!({"suite": "desk", "tags": ["star", 4]}));
    out.push(FixtureWorkspace {
        name: "star",
        topology: topo,
        templates: store,
        simulation: sim,
    });
    out
}

// ---------------------------------------------------------------------------
// Model-checked topology edits
// ---------------------------------------------------------------------------

pub const MAX_NODES: usize = 20;

#[derive(Debug, Clone)]
pub enum Op {
    AddRouter(usize),
    Connect(usize, usize, f64),
    RemoveNode(usize),
    RemoveHalfEdge(usize),
    RemovePair(usize, usize),
    ChangeType(usize),
    SetLatency(usize, usize, f64),
    SetTdm(usize, usize, f64),
}

pub fn random_ops<R: rand::Rng>(rng: &mut R, len: usize) -> Vec<Op> {
    (0..len)
        .map(|_| {
            let (a, b) = (rng.random_range(0..12), rng.random_range(0..12));
            match rng.random_range(0..10) {
                0..=2 => Op::AddRouter(a),
                3..=5 => Op::Connect(a, b, rng.random_range(-10.0..1e5)),
                6 => Op::RemoveNode(rng.random_range(0..MAX_NODES)),
                7 => match rng.random_range(0..3) {
                    0 => Op::RemoveHalfEdge(rng.random_range(0..2 * MAX_NODES)),
                    1 => Op::RemovePair(a, b),
                    _ => Op::ChangeType(rng.random_range(0..MAX_NODES)),
                },
                8 => Op::SetLatency(rng.random_range(0..MAX_NODES), rng.random_range(0..MAX_NODES), rng.random_range(-5.0..1e9)),
                _ => Op::SetTdm(rng.random_range(0..MAX_NODES), rng.random_range(0..MAX_NODES), rng.random_range(0u32..9) as f64 / 2.0),
            }
        })
        .collect()
}

/// Applies `ops` and checks after each step against an independent model
/// of routers and router-router links. Returns the first discrepancy.
pub fn check_edit_sequence(ops: &[Op]) -> Result<(), String> {
    use std::collections::BTreeSet;
    let store = TemplateStore::default();
    let mut topo = Topology::new("model");
    let mut routers: BTreeSet<String> = BTreeSet::new();
    let mut links: BTreeSet<(String, String)> = BTreeSet::new();
    let pair = |a: &str, b: &str| if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
    for (step, op) in ops.iter().enumerate() {
        let before = topo.clone();
        let names: Vec<String> = topo.nodes().iter().map(|n| n.name.clone()).collect();
        let expect_ok: bool;
        let result = match op {
            Op::AddRouter(i) => {
                let name = format!("r{i}");
                if topo.nodes().len() >= MAX_NODES {
                    continue;
                }
                expect_ok = !routers.contains(&name);
                if expect_ok {
                    routers.insert(name.clone());
                }
                topo.add_node(&store, &name, NodeType::QuantumRouter, DEFAULT_ROUTER)
            }
            Op::Connect(a, b, d) => {
                let (a, b) = (format!("r{a}"), format!("r{b}"));
                if topo.nodes().len() >= MAX_NODES {
                    continue;
                }
                expect_ok = routers.contains(&a)
                    && routers.contains(&b)
                    && a != b
                    && !links.contains(&pair(&a, &b))
                    && *d >= 0.0;
                if expect_ok {
                    links.insert(pair(&a, &b));
                }
                topo.add_edge(&store, &a, &b, *d, 0.2)
            }
            Op::RemoveNode(i) => {
                let Some(name) = names.get(*i) else { continue };
                expect_ok = true;
                if routers.remove(name) {
                    links.retain(|(x, y)| x != name && y != name);
                } else {
                    let (x, y) = topo.bsm_endpoints(name).expect("bsm");
                    links.remove(&pair(x, y));
                }
                topo.remove_element(&qnet::topology::ElementId::Node(name.clone()))
            }
            Op::RemoveHalfEdge(k) => {
                let Some(e) = topo.edges().get(*k).cloned() else { continue };
                expect_ok = true;
                let bsm = if routers.contains(&e.a) { &e.b } else { &e.a };
                let (x, y) = topo.bsm_endpoints(bsm).expect("bsm");
                links.remove(&pair(x, y));
                let id = topo.parse_element(&format!("{}--{}", e.a, e.b)).expect("edge id");
                topo.remove_element(&id)
            }
            Op::RemovePair(a, b) => {
                let (a, b) = (format!("r{a}"), format!("r{b}"));
                expect_ok = links.remove(&pair(&a, &b));
                match topo.parse_element(&format!("{a}|{b}")) {
                    Some(id) => topo.remove_element(&id),
                    None => Err(qnet::topology::TopologyError::UnknownElement(format!("{a}|{b}"))),
                }
            }
            Op::ChangeType(i) => {
                let Some(name) = names.get(*i) else { continue };
                expect_ok = false;
                let node = topo.node(name).unwrap().clone();
                let other = match node.node_type {
                    NodeType::QuantumRouter => NodeType::BsmNode,
                    NodeType::BsmNode => NodeType::QuantumRouter,
                };
                let template = match other {
                    NodeType::QuantumRouter => DEFAULT_ROUTER,
                    NodeType::BsmNode => qnet::templates::DEFAULT_BSM,
                };
                topo.edit_node(
                    &store,
                    name,
                    &qnet::topology::NodePatch {
                        node_type: Some(other),
                        template_id: Some(template.into()),
                    },
                )
            }
            Op::SetLatency(i, j, v) | Op::SetTdm(i, j, v) => {
                let (Some(a), Some(b)) = (names.get(*i), names.get(*j)) else { continue };
                let kind = if matches!(op, Op::SetLatency(..)) { MatrixKind::CcLatency } else { MatrixKind::QcTdm };
                expect_ok = *v >= 0.0
                    && match kind {
                        MatrixKind::CcLatency => a != b,
                        MatrixKind::QcTdm => v.fract() == 0.0,
                    };
                topo.set_matrix_entry(kind, a, b, *v)
            }
        };
        if result.is_ok() != expect_ok {
            return Err(format!("step {step} {op:?}: expected ok={expect_ok}, got {result:?}"));
        }
        if result.is_err() && topo != before {
            return Err(format!("step {step} {op:?}: failed edit changed the topology"));
        }
        let actual_routers: BTreeSet<String> = topo.routers().map(|n| n.name.clone()).collect();
        if actual_routers != routers {
            return Err(format!("step {step} {op:?}: routers {actual_routers:?} != model {routers:?}"));
        }
        let actual_links: BTreeSet<(String, String)> =
            topo.router_links().iter().map(|(a, b, _)| pair(a, b)).collect();
        if actual_links != links {
            return Err(format!("step {step} {op:?}: links {actual_links:?} != model {links:?}"));
        }
        let bsm_count = topo.nodes().iter().filter(|n| n.node_type == NodeType::BsmNode).count();
        if bsm_count != links.len() {
            return Err(format!("step {step} {op:?}: {bsm_count} BSM nodes for {} links", links.len()));
        }
        if topo.edges().len() != 2 * links.len() {
            return Err(format!("step {step} {op:?}: {} edges for {} links", topo.edges().len(), links.len()));
        }
        if let Err((path, msg)) = topo.check_invariants() {
            return Err(format!("step {step} {op:?}: invariant {path}: {msg}"));
        }
        let mut legend = BTreeSet::new();
        if !routers.is_empty() {
            legend.insert(NodeType::QuantumRouter);
        }
        if !links.is_empty() {
            legend.insert(NodeType::BsmNode);
        }
        if topo.legend() != legend {
            return Err(format!("step {step} {op:?}: legend {:?} != {legend:?}", topo.legend()));
        }
    }
    Ok(())
}
