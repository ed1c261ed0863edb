//! Drives the HTTP API in-process: edit a topology, launch a run, poll it.
//! `qnet serve` exposes the same router on a socket.
//!
//!     cargo run --example http_service

use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use http_body_util::BodyExt;
use qnet::service::{router, AppState, ServiceConfig, Workspace};
use qnet::templates::TemplateStore;
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (u16, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

#[tokio::main]
async fn main() {
    let root = std::env::temp_dir().join("qnet-example-service");
    let _ = std::fs::remove_dir_all(&root);
    let app = router(AppState::new(
        Workspace {
            templates: TemplateStore::default(),
            ..Default::default()
        },
        ServiceConfig {
            output_root: root,
            max_runs: 2,
            static_dir: None,
        },
    ));

    for name in ["a", "b", "c"] {
        let body = format!(r#"{{"name":"{name}","type":"QuantumRouter","template":"default_router"}}"#);
        println!("POST /api/nodes {name}: {:?}", call(&app, Method::POST, "/api/nodes", &body).await);
    }
    for (a, b) in [("a", "b"), ("b", "c")] {
        let body = format!(r#"{{"a":"{a}","b":"{b}","distance_m":4000,"attenuation_db_km":0.2}}"#);
        println!("POST /api/edges: {:?}", call(&app, Method::POST, "/api/edges", &body).await);
    }
    println!("legend: {:?}", call(&app, Method::GET, "/api/legend", "").await);
    println!(
        "duplicate: {:?}",
        call(&app, Method::POST, "/api/nodes", r#"{"name":"a","type":"QuantumRouter","template":"default_router"}"#).await
    );

    let sim = r#"{"name":"demo","duration_s":10,"seed":1,"request_rate_hz":5,
        "memories_per_request":1,"target_fidelity":0.5,"swap_success_prob":0.9}"#;
    println!("launch: {:?}", call(&app, Method::POST, "/api/simulations", sim).await);
    loop {
        let (_, body) = call(&app, Method::GET, "/api/simulations/demo/progress", "").await;
        println!("progress: {body}");
        if body.contains("Done") || body.contains("Failed") {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (_, results) = call(&app, Method::GET, "/api/simulations/demo/results", "").await;
    println!("{results}");
}
