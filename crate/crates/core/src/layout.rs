//! Force-directed placement of topology nodes.
//!
//! Hooke springs pull adjacent nodes toward the ideal edge length and an
//! inverse-square force pushes every pair apart. Each iteration is
//! quadratic in the node count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Topology;

/// Pairs closer than this are treated as coincident.
pub const COINCIDENT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub spring_constant: f64,
    pub ideal_edge_length: f64,
    pub repulsion_constant: f64,
    pub damping: f64,
    pub max_iterations: u32,
    pub convergence_threshold: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            spring_constant: 0.1,
            ideal_edge_length: 100.0,
            repulsion_constant: 2000.0,
            damping: 0.9,
            max_iterations: 1000,
            convergence_threshold: 0.1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("cannot lay out an empty topology")]
    EmptyTopology,
    #[error("invalid layout parameter `{0}`")]
    InvalidParams(&'static str),
}

impl LayoutError {
    pub fn code(&self) -> &'static str {
        match self {
            LayoutError::EmptyTopology => "EmptyTopology",
            LayoutError::InvalidParams(_) => "InvalidParams",
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let positive = [
            ("spring_constant", self.spring_constant),
            ("ideal_edge_length", self.ideal_edge_length),
            ("repulsion_constant", self.repulsion_constant),
            ("convergence_threshold", self.convergence_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LayoutError::InvalidParams(name));
            }
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(LayoutError::InvalidParams("damping"));
        }
        if self.max_iterations == 0 {
            return Err(LayoutError::InvalidParams("max_iterations"));
        }
        Ok(())
    }

    /// Largest move a node may make in one iteration.
    fn max_step(&self) -> f64 {
        self.ideal_edge_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePosition {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutResult {
    /// One entry per node, in topology order.
    pub positions: Vec<NodePosition>,
    pub iterations_used: u32,
    pub converged: bool,
}

impl LayoutResult {
    pub fn position(&self, name: &str) -> Option<Point> {
        self.positions
            .iter()
            .find(|p| p.name == name)
            .map(|p| Point { x: p.x, y: p.y })
    }
}

/// Edge list as index pairs into `topo.nodes()`.
pub fn edge_indices(topo: &Topology) -> Vec<(usize, usize)> {
    topo.edges()
        .iter()
        .filter_map(|e| Some((topo.index_of(&e.a)?, topo.index_of(&e.b)?)))
        .collect()
}

/// Net force on every node.
pub fn net_forces<R: Rng + ?Sized>(
    positions: &[Point],
    edges: &[(usize, usize)],
    params: &LayoutParams,
    rng: &mut R,
) -> Vec<Point> {
    let n = positions.len();
    let mut forces = vec![Point::default(); n];
    for i in 0..n {
        for j in i + 1..n {
            let (dir, d) = direction(&positions[i], &positions[j], rng);
            let magnitude = params.repulsion_constant / (d * d);
            forces[i].x -= dir.x * magnitude;
            forces[i].y -= dir.y * magnitude;
            forces[j].x += dir.x * magnitude;
            forces[j].y += dir.y * magnitude;
        }
    }
    for &(i, j) in edges {
        let (dir, d) = direction(&positions[i], &positions[j], rng);
        let magnitude = params.spring_constant * (d - params.ideal_edge_length);
        forces[i].x += dir.x * magnitude;
        forces[i].y += dir.y * magnitude;
        forces[j].x -= dir.x * magnitude;
        forces[j].y -= dir.y * magnitude;
    }
    forces
}

/// Unit vector from `a` to `b` and the distance, clamped below by the
/// coincidence epsilon. Coincident pairs get a random direction.
fn direction<R: Rng + ?Sized>(a: &Point, b: &Point, rng: &mut R) -> (Point, f64) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let d = dx.hypot(dy);
    if d < COINCIDENT_EPSILON {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        return (Point { x: angle.cos(), y: angle.sin() }, COINCIDENT_EPSILON);
    }
    (Point { x: dx / d, y: dy / d }, d)
}

/// One force iteration. Returns the summed length of all node moves.
pub fn layout_step<R: Rng + ?Sized>(
    positions: &mut [Point],
    edges: &[(usize, usize)],
    params: &LayoutParams,
    rng: &mut R,
) -> f64 {
    let forces = net_forces(positions, edges, params, rng);
    let cap = params.max_step();
    let mut total = 0.0;
    for (p, f) in positions.iter_mut().zip(forces) {
        let (mut dx, mut dy) = (f.x * params.damping, f.y * params.damping);
        let len = dx.hypot(dy);
        if len > cap {
            dx *= cap / len;
            dy *= cap / len;
        }
        p.x += dx;
        p.y += dy;
        total += dx.hypot(dy);
    }
    total
}

/// Seeded uniform placement in a square of side `ideal * sqrt(|V|)`.
pub fn initial_positions<R: Rng + ?Sized>(n: usize, params: &LayoutParams, rng: &mut R) -> Vec<Point> {
    let side = params.ideal_edge_length * (n as f64).sqrt();
    (0..n)
        .map(|_| Point {
            x: rng.random_range(0.0..side),
            y: rng.random_range(0.0..side),
        })
        .collect()
}

pub fn compute_layout(topo: &Topology, params: &LayoutParams, seed: u64) -> Result<LayoutResult, LayoutError> {
    compute_layout_traced(topo, params, seed, |_| {})
}

/// Like [`compute_layout`], reporting each iteration's total displacement.
pub fn compute_layout_traced(
    topo: &Topology,
    params: &LayoutParams,
    seed: u64,
    trace: impl FnMut(f64),
) -> Result<LayoutResult, LayoutError> {
    if topo.is_empty() {
        return Err(LayoutError::EmptyTopology);
    }
    let (positions, iterations_used, converged) =
        layout_graph(topo.nodes().len(), &edge_indices(topo), params, seed, trace)?;
    Ok(LayoutResult {
        positions: topo
            .nodes()
            .iter()
            .zip(&positions)
            .map(|(node, p)| NodePosition {
                name: node.name.clone(),
                x: p.x,
                y: p.y,
            })
            .collect(),
        iterations_used,
        converged,
    })
}

/// Lays out an abstract graph of `n` nodes. Returns centred positions,
/// iterations used and whether the displacement fell below the threshold.
pub fn layout_graph(
    n: usize,
    edges: &[(usize, usize)],
    params: &LayoutParams,
    seed: u64,
    mut trace: impl FnMut(f64),
) -> Result<(Vec<Point>, u32, bool), LayoutError> {
    if n == 0 {
        return Err(LayoutError::EmptyTopology);
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = initial_positions(n, params, &mut rng);
    let mut iterations_used = 0;
    let mut converged = false;
    while iterations_used < params.max_iterations {
        let moved = layout_step(&mut positions, edges, params, &mut rng);
        iterations_used += 1;
        trace(moved);
        if moved < params.convergence_threshold {
            converged = true;
            break;
        }
    }
    // centre on the origin
    let cx = positions.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = positions.iter().map(|p| p.y).sum::<f64>() / n as f64;
    for p in &mut positions {
        p.x -= cx;
        p.y -= cy;
    }
    Ok((positions, iterations_used, converged))
}
