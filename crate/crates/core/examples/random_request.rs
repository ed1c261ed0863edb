//! Random-request traffic over a four-router line.
//!
//!     cargo run --release --example random_request

use qnet::randreq::{Simulation, SimulationConfig, SimulationOptions};
use qnet::templates::{TemplateStore, DEFAULT_ROUTER};
use qnet::topology::{NodeType, Topology};

fn main() {
    let store = TemplateStore::default();
    let mut topo = Topology::new("line");
    let names = ["r0", "r1", "r2", "r3"];
    for n in names {
        topo.add_node(&store, n, NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
    }
    for w in names.windows(2) {
        topo.add_edge(&store, w[0], w[1], 5_000.0, 0.2).unwrap();
    }

    let cfg = SimulationConfig {
        name: "line-demo".into(),
        duration_s: 20.0,
        seed: 42,
        request_rate_hz: 5.0,
        memories_per_request: 2,
        target_fidelity: 0.6,
        swap_success_prob: 0.8,
    };
    let sim = Simulation::new(&topo, &store, &cfg, SimulationOptions::default()).unwrap();
    let progress = sim.progress_handle();
    let out = sim.run().unwrap();
    assert_eq!(progress.get(), 1.0);

    println!("{:<4} {:>16} {:>12} {:>12}", "node", "avg wait (ps)", "reservations", "pairs/s");
    for n in &out.report.nodes {
        println!(
            "{:<4} {:>16.0} {:>12} {:>12.3}",
            n.name, n.avg_wait_time_ps, n.reservations, n.throughput_pairs_per_s
        );
    }
    let t = &out.report.totals;
    println!(
        "{} requests: {} completed, {} still open; {} link attempts, {}/{} swaps succeeded",
        t.requests_generated,
        t.requests_completed,
        t.requests_incomplete,
        t.link_attempts,
        t.swap_successes,
        t.swap_attempts
    );
}
