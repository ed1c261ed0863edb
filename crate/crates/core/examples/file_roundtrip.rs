//! Exports a workspace, reads it back, and stores a run directory.
//!
//!     cargo run --example file_roundtrip

use qnet::randreq::{run_simulation, SimulationConfig};
use qnet::serialization::{
    export_simulation, export_templates, export_topology, import_topology, import_workspace, write_results,
    RunInputs, SimulationFile,
};
use qnet::templates::{TemplateStore, DEFAULT_ROUTER};
use qnet::topology::{NodeType, Topology};

fn main() {
    let store = TemplateStore::default();
    let mut topo = Topology::new("pair");
    topo.add_node(&store, "r1", NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
    topo.add_node(&store, "r2", NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
    topo.add_edge(&store, "r1", "r2", 10_000.0, 0.2).unwrap();
    let sim: SimulationFile = SimulationConfig {
        name: "pair-run".into(),
        duration_s: 5.0,
        seed: 7,
        request_rate_hz: 5.0,
        memories_per_request: 1,
        target_fidelity: 0.5,
        swap_success_prob: 0.5,
    }
    .into();

    let inputs = RunInputs {
        topology: export_topology(&topo),
        templates: export_templates(&store),
        simulation: export_simulation(&sim),
    };
    println!("{}", inputs.topology);

    let ws = import_workspace(&inputs.topology, &inputs.templates, Some(&inputs.simulation)).unwrap();
    assert_eq!(ws.topology, topo);
    assert_eq!(export_topology(&ws.topology), inputs.topology);

    // errors carry a code and a document path
    let broken = inputs.topology.replace("\"distance_m\": 5000.0", "\"distance_m\": -1.0");
    let err = import_topology(&broken).unwrap_err();
    println!("{} at {:?}: {err}", err.code(), err.path());

    let report = run_simulation(&ws.topology, &ws.templates, &sim.config).unwrap();
    let root = std::env::temp_dir().join("qnet-example-runs");
    let dir = write_results(&report, &root, &inputs, true).unwrap();
    println!("run stored in {}", dir.display());
}
