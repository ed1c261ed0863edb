//! Defines custom hardware templates and resolves a node against them.
//!
//!     cargo run --example templates

use qnet::hardware::MemoryParams;
use qnet::templates::{RouterTemplate, Template, TemplateParams, TemplateStore};
use qnet::topology::{NodeType, Topology};

fn main() {
    let mut store = TemplateStore::default();
    let topo = Topology::new("");
    store
        .upsert(
            Template::new(
                "long_lived",
                TemplateParams::QuantumMemory(MemoryParams {
                    coherence_time_s: 10.0,
                    frequency_hz: 5e3,
                    efficiency: 0.6,
                    fidelity: 0.95,
                }),
            ),
            &topo,
        )
        .unwrap();
    store
        .upsert(
            Template::new(
                "archive_router",
                TemplateParams::QuantumRouter(RouterTemplate {
                    memory_array_size: 64,
                    memory_template: "long_lived".into(),
                }),
            ),
            &topo,
        )
        .unwrap();

    for t in store.iter() {
        println!("{:<16} {:?}", t.id, t.template_type());
    }

    // a router pointing at a missing memory is refused
    let broken = Template::new(
        "broken",
        TemplateParams::QuantumRouter(RouterTemplate {
            memory_array_size: 4,
            memory_template: "nowhere".into(),
        }),
    );
    match store.upsert(broken, &topo) {
        Err(e) => println!("rejected: {} at {}", e.code(), e.path().unwrap_or("-")),
        Ok(_) => unreachable!(),
    }

    let mut net = Topology::new("archive");
    net.add_node(&store, "vault", NodeType::QuantumRouter, "archive_router").unwrap();
    let resolved = store.resolve(&net.nodes()[0]).unwrap();
    println!("vault resolves to {resolved:?}");
}
