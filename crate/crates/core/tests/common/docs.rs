use proptest::prelude::*;
use qnet::hardware::{DetectorParams, MemoryParams};
use qnet::randreq::SimulationConfig;
use qnet::serialization::{
    import_simulation, import_templates, import_topology, import_topology_with, SerializationError, SimulationFile,
};
use qnet::templates::{BsmTemplate, RouterTemplate, Template, TemplateParams, TemplateStore, DEFAULT_ROUTER};
use qnet::topology::{MatrixKind, NodeType, Topology};
use serde_json::Value;

#[derive(serde::Deserialize)]
pub struct Case {
    pub file: String,
    pub kind: String,
    pub error: String,
    pub path: String,
}

pub fn run_malformed_case(text: &str, kind: &str) -> SerializationError {
    let result = match kind {
        "topology" => import_topology(text).map(drop),
        "templates" => import_templates(text).map(drop),
        "simulation" => import_simulation(text).map(drop),
        "workspace" => import_topology_with(text, &TemplateStore::default()).map(drop),
        other => panic!("unknown kind {other}"),
    };
    result.expect_err("fixture must be rejected")
}

/// Manifest of the malformed fixtures: one expected error class and path each.
pub fn malformed_cases() -> Vec<Case> {
    let text = std::fs::read_to_string(super::fixtures().join("malformed/manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

// ---------------------------------------------------------------------------
// Randomized documents
// ---------------------------------------------------------------------------

pub fn memory() -> impl Strategy<Value = MemoryParams> {
    (1e-6..1e3f64, 1.0..1e9f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(c, f, e, fi)| MemoryParams {
        coherence_time_s: c,
        frequency_hz: f,
        efficiency: e,
        fidelity: fi,
    })
}

pub fn detector() -> impl Strategy<Value = DetectorParams> {
    (0.0..=1.0f64, 0.0..1e10f64, 0.0..1e6f64, 1u64..10_000).prop_map(|(e, c, d, r)| DetectorParams {
        efficiency: e,
        count_rate_hz: c,
        dark_count_rate_hz: d,
        time_resolution_ps: r,
    })
}

prop_compose! {
    pub fn store()(
        memories in prop::collection::vec(memory(), 1..4),
        detectors in prop::collection::vec(detector(), 1..4),
        routers in prop::collection::vec((1u32..64, any::<prop::sample::Index>()), 0..4),
        bsms in prop::collection::vec((any::<prop::sample::Index>(), 0u64..1000), 0..4),
    ) -> TemplateStore {
        let mut t: Vec<Template> = TemplateStore::default().iter().cloned().collect();
        for (i, m) in memories.iter().enumerate() {
            t.push(Template::new(format!("mem{i}"), TemplateParams::QuantumMemory(*m)));
        }
        for (i, d) in detectors.iter().enumerate() {
            t.push(Template::new(format!("det{i}"), TemplateParams::Detector(*d)));
        }
        for (i, (size, mem)) in routers.iter().enumerate() {
            t.push(Template::new(format!("router{i}"), TemplateParams::QuantumRouter(RouterTemplate {
                memory_array_size: *size,
                memory_template: format!("mem{}", mem.index(memories.len())),
            })));
        }
        for (i, (det, extra)) in bsms.iter().enumerate() {
            let d = det.index(detectors.len());
            t.push(Template::new(format!("bsm{i}"), TemplateParams::Bsm(BsmTemplate {
                detector_template: format!("det{d}"),
                coincidence_window_ps: detectors[d].time_resolution_ps + extra,
            })));
        }
        TemplateStore::from_templates(t).unwrap()
    }
}

prop_compose! {
    pub fn topology()(
        name in "\\PC{0,12}",
        n in 0usize..9,
        links in prop::collection::vec((0usize..9, 0usize..9, 0.0..1e6f64, 0.0..2.0f64), 0..16),
        latencies in prop::collection::vec((0usize..9, 0usize..9, 0u64..1u64 << 50), 0..6),
        tdm in prop::collection::vec((0usize..9, 0usize..9, 0u64..64), 0..6),
    ) -> Topology {
        let store = TemplateStore::default();
        let mut topo = Topology::new(name);
        for i in 0..n {
            topo.add_node(&store, &format!("n{i}"), NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
        }
        for (a, b, d, att) in links {
            if a < n && b < n {
                let _ = topo.add_edge(&store, &format!("n{a}"), &format!("n{b}"), d, att);
            }
        }
        let names: Vec<String> = topo.nodes().iter().map(|x| x.name.clone()).collect();
        let m = names.len();
        for (i, j, v) in latencies {
            if i < m && j < m && i != j {
                topo.set_matrix_entry(MatrixKind::CcLatency, &names[i], &names[j], v as f64).unwrap();
            }
        }
        for (i, j, v) in tdm {
            if i < m && j < m {
                topo.set_matrix_entry(MatrixKind::QcTdm, &names[i], &names[j], v as f64).unwrap();
            }
        }
        topo
    }
}

pub fn extra_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        (-1e12..1e12f64).prop_map(Value::from),
        "\\PC{0,8}".prop_map(Value::from),
        Just(Value::Null),
    ];
    leaf.prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Value::from),
            prop::collection::btree_map("[a-z]{1,4}", inner, 0..3)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

prop_compose! {
    pub fn simulation()(
        name in "[A-Za-z0-9_-][A-Za-z0-9._-]{0,11}",
        duration in 1e-6..1e6f64,
        seed in any::<u64>(),
        rate in 0.0..1e4f64,
        memories in 1u32..16,
        fidelity in 0.0..=1.0f64,
        swap in 0.0..=1.0f64,
        extras in prop::collection::btree_map("x_[a-z]{1,6}", extra_value(), 0..3),
    ) -> SimulationFile {
        SimulationFile {
            config: SimulationConfig {
                name,
                duration_s: duration,
                seed,
                request_rate_hz: rate,
                memories_per_request: memories,
                target_fidelity: fidelity,
                swap_success_prob: swap,
            },
            extra: extras.into_iter().collect(),
        }
    }
}
