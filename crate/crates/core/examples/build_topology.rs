//! Builds a small metro network and shows the implicit BSM nodes.
//!
//!     cargo run --example build_topology

use qnet::templates::{TemplateStore, DEFAULT_ROUTER};
use qnet::topology::{MatrixKind, NodeType, Topology};

fn main() {
    let store = TemplateStore::default();
    let mut topo = Topology::new("metro");
    for name in ["alice", "bob", "charlie"] {
        topo.add_node(&store, name, NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
    }
    // every router-router connection gets its own BSM node in the middle
    topo.add_edge(&store, "alice", "bob", 12_000.0, 0.2).unwrap();
    topo.add_edge(&store, "bob", "charlie", 8_000.0, 0.2).unwrap();
    println!("added {}", qnet::topology::bsm_name("bob", "alice"));

    if let Err(e) = topo.add_edge(&store, "alice", "alice", 1.0, 0.2) {
        println!("rejected: {} ({e})", e.code());
    }

    // classical channels run along each half edge; an explicit latency
    // overrides the fibre delay, zero falls back to it
    topo.set_matrix_entry(MatrixKind::CcLatency, "alice", "bsm.alice.bob", 2.5e7).unwrap();

    println!("nodes:");
    for n in topo.nodes() {
        println!("  {:<20} {:?} ({})", n.name, n.node_type, n.template_id);
    }
    println!("quantum channel halves:");
    for e in topo.edges() {
        println!("  {} -- {}  {} m", e.a, e.b, e.distance_m);
    }
    println!("legend: {:?}", topo.legend());
    for (a, b) in [("alice", "bsm.alice.bob"), ("bob", "bsm.alice.bob")] {
        println!("classical delay {a}..{b}: {:?} ps", topo.classical_delay(a, b));
    }

    topo.remove_element(&topo.parse_element("alice|bob").unwrap()).unwrap();
    println!("after removing alice|bob: {} nodes", topo.nodes().len());
    topo.check_invariants().unwrap();
}
