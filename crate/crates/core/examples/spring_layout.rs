//! Lays out a ring of routers with the spring embedder.
//!
//!     cargo run --example spring_layout

use qnet::layout::{compute_layout_traced, LayoutParams};
use qnet::templates::{TemplateStore, DEFAULT_ROUTER};
use qnet::topology::{NodeType, Topology};

fn main() {
    let store = TemplateStore::default();
    let mut topo = Topology::new("ring");
    let n = 6;
    for i in 0..n {
        topo.add_node(&store, &format!("r{i}"), NodeType::QuantumRouter, DEFAULT_ROUTER).unwrap();
    }
    for i in 0..n {
        topo.add_edge(&store, &format!("r{i}"), &format!("r{}", (i + 1) % n), 1000.0, 0.2).unwrap();
    }

    let mut moves = Vec::new();
    // rings untangle slowly under the default repulsion; allow more rounds
    let params = LayoutParams {
        max_iterations: 10_000,
        ..Default::default()
    };
    let result = compute_layout_traced(&topo, &params, 3, |m| moves.push(m)).unwrap();
    println!(
        "{} iterations, converged: {}, first moves {:?}",
        result.iterations_used,
        result.converged,
        &moves[..moves.len().min(3)]
    );
    for p in &result.positions {
        println!("  {:<12} ({:>8.2}, {:>8.2})", p.name, p.x, p.y);
    }
}
