//! Random-request traffic over a configured network.
//!
//! Requests arrive as a Poisson process between uniformly chosen router
//! pairs. A request reserves memories on every router along its shortest
//! path, generates heralded entanglement on each link through the link's
//! BSM node, swaps at intermediate routers and completes once every one of
//! its `memories_per_request` end-to-end pairs has been delivered.
//!
//! Per-node metrics: mean wait between arrival and reservation grant,
//! number of reservations held, and delivered end-to-end pairs per second.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{
    seconds_to_ps, BsmState, ChannelParams, HardwareError, MemoryArray, PhotonArrival, Picos, SlotRef, SlotState,
};
use crate::simkernel::{Event, EventHandler, HandlerError, KernelError, ProgressHandle, Timeline};
use crate::templates::{ResolvedNode, TemplateError, TemplateStore};
use crate::topology::{NodeType, Topology};

/// Longest simulated span representable in picoseconds with headroom.
pub const MAX_DURATION_S: f64 = 1.0e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub name: String,
    pub duration_s: f64,
    pub seed: u64,
    pub request_rate_hz: f64,
    pub memories_per_request: u32,
    pub target_fidelity: f64,
    pub swap_success_prob: f64,
}

impl SimulationConfig {
    /// Checks every field; the error names the offending field.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &'static str, reason: &str| {
            Err(SimError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !is_safe_name(&self.name) {
            return bad("name", "must be a nonempty file name of letters, digits, '.', '_' or '-'");
        }
        if !(self.duration_s > 0.0 && self.duration_s <= MAX_DURATION_S) {
            return bad("duration_s", "must be positive and at most 1e7 s");
        }
        if !(self.request_rate_hz >= 0.0 && self.request_rate_hz.is_finite()) {
            return bad("request_rate_hz", "must be non-negative");
        }
        if self.memories_per_request == 0 {
            return bad("memories_per_request", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.target_fidelity) {
            return bad("target_fidelity", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.swap_success_prob) {
            return bad("swap_success_prob", "must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn duration_ps(&self) -> Picos {
        seconds_to_ps(self.duration_s)
    }
}

/// Run names double as directory names.
pub fn is_safe_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Knobs that are not part of the shared simulation file.
#[derive(Debug, Clone, Default)]
pub struct SimulationOptions {
    /// Let detector dark counts herald false BSM successes.
    pub dark_counts: bool,
    /// Audit memory accounting after every event.
    pub audit: bool,
    pub progress: Option<ProgressHandle>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("at least two routers are required, found {0}")]
    InsufficientRouters(usize),
    #[error("template resolution failed: {0}")]
    TemplateResolution(#[from] TemplateError),
    #[error("invalid simulation config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::InsufficientRouters(_) => "InsufficientRouters",
            SimError::TemplateResolution(_) => "TemplateResolutionError",
            SimError::InvalidConfig { .. } => "SchemaError",
            SimError::Kernel(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Queued,
    Granted,
    Completed,
    /// No path between the endpoints.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_time: Picos,
    pub source: String,
    pub destination: String,
    pub granted_at: Option<Picos>,
    pub completed_at: Option<Picos>,
    pub completed_pairs: u32,
    pub status: RequestStatus,
}

impl Request {
    pub fn wait_time(&self) -> Option<Picos> {
        self.granted_at.map(|g| g - self.arrival_time)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub name: String,
    pub avg_wait_time_ps: f64,
    pub reservations: u64,
    pub throughput_pairs_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub seed: u64,
    pub requests_generated: u64,
    pub requests_granted: u64,
    pub requests_completed: u64,
    pub requests_rejected: u64,
    pub requests_incomplete: u64,
    pub pairs_completed: u64,
    pub pairs_discarded: u64,
    pub pairs_expired: u64,
    pub link_attempts: u64,
    pub link_successes: u64,
    pub swap_attempts: u64,
    pub swap_successes: u64,
    pub events_processed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub name: String,
    pub duration_s: f64,
    pub nodes: Vec<NodeReport>,
    pub totals: Totals,
}

impl SimulationReport {
    pub fn node(&self, name: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

/// Memory accounting observations collected when auditing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// (router, peak reserved-or-entangled slots, array size)
    pub peak_occupancy: Vec<(String, usize, usize)>,
    pub audited_events: u64,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: SimulationReport,
    pub requests: Vec<Request>,
    pub diagnostics: Diagnostics,
}

/// Poisson arrivals over `[0, duration]` with uniformly chosen endpoints.
pub fn generate_requests(cfg: &SimulationConfig, routers: &[String]) -> Result<Vec<Request>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_requests_with(cfg, routers, &mut rng)
}

pub fn generate_requests_with<R: Rng + ?Sized>(
    cfg: &SimulationConfig,
    routers: &[String],
    rng: &mut R,
) -> Result<Vec<Request>, SimError> {
    if routers.len() < 2 {
        return Err(SimError::InsufficientRouters(routers.len()));
    }
    let mut out = Vec::new();
    if cfg.request_rate_hz <= 0.0 {
        return Ok(out);
    }
    let gaps = rand_distr::Exp::new(cfg.request_rate_hz).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += rng.sample(gaps);
        if t > cfg.duration_s {
            break;
        }
        let src = rng.random_range(0..routers.len());
        let mut dst = rng.random_range(0..routers.len() - 1);
        if dst >= src {
            dst += 1;
        }
        out.push(Request {
            id: out.len() as u64,
            arrival_time: seconds_to_ps(t),
            source: routers[src].clone(),
            destination: routers[dst].clone(),
            granted_at: None,
            completed_at: None,
            completed_pairs: 0,
            status: RequestStatus::Pending,
        });
    }
    Ok(out)
}

/// Hop-count shortest path over router adjacency (`adj[i]` sorted by
/// neighbour name). Among equal-length paths the one whose name sequence
/// is lexicographically smallest wins.
pub fn shortest_path(adj: &[Vec<usize>], names: &[String], src: usize, dst: usize) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    dist[dst] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if dist[src] == usize::MAX {
        return None;
    }
    let mut path = vec![src];
    let mut cur = src;
    while cur != dst {
        cur = adj[cur]
            .iter()
            .copied()
            .filter(|&v| dist[v] + 1 == dist[cur])
            .min_by(|&a, &b| names[a].cmp(&names[b]))
            .expect("BFS predecessor");
        path.push(cur);
    }
    Some(path)
}

// ---------------------------------------------------------------------------
// Simulation state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum SimEvent {
    Arrival {
        request: usize,
    },
    Attempt {
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
    },
    BsmArrival {
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
        attempt_at: Picos,
        photons: [Option<PhotonArrival>; 2],
    },
    Herald {
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
        attempt_at: Picos,
        success: bool,
    },
    Expire {
        request: usize,
        channel: usize,
        segment: u64,
    },
}

struct RouterState {
    name: String,
    memory: MemoryArray,
    reservations: u64,
    pairs: u64,
    peak_occupancy: usize,
}

struct LinkState {
    /// Router indices, one per BSM input port.
    routers: [usize; 2],
    /// Half-channel from each port's router to the BSM.
    halves: [ChannelParams; 2],
    /// Classical BSM-to-router delay per port.
    herald_delay: [Picos; 2],
    bsm: BsmState,
}

#[derive(Debug, Clone)]
struct Segment {
    id: u64,
    start: usize,
    end: usize,
    fidelity: f64,
    expires_at: Picos,
}

struct Channel {
    /// Slots held at each path position: (toward previous hop, toward next hop).
    slots: Vec<(Option<usize>, Option<usize>)>,
    epochs: Vec<u64>,
    segments: Vec<Segment>,
    done: bool,
}

struct Grant {
    path: Vec<usize>,
    /// (link index, true when path order matches port order)
    hops: Vec<(usize, bool)>,
    channels: Vec<Channel>,
}

struct World {
    cfg: SimulationConfig,
    routers: Vec<RouterState>,
    links: Vec<LinkState>,
    /// Router adjacency: neighbour router and link index, sorted by name.
    adj: Vec<Vec<(usize, usize)>>,
    requests: Vec<Request>,
    paths: Vec<Option<Option<Vec<usize>>>>,
    grants: Vec<Option<Grant>>,
    queue: VecDeque<usize>,
    totals: Totals,
    next_segment: u64,
    audit: bool,
    diagnostics: Diagnostics,
}

fn hw(e: HardwareError) -> HandlerError {
    HandlerError(e.to_string())
}

impl World {
    fn router_index(&self, name: &str) -> Option<usize> {
        self.routers.iter().position(|r| r.name == name)
    }

    fn path_for(&mut self, request: usize) -> Option<Vec<usize>> {
        if self.paths[request].is_none() {
            let r = &self.requests[request];
            let src = self.router_index(&r.source).expect("router");
            let dst = self.router_index(&r.destination).expect("router");
            let adj: Vec<Vec<usize>> = self.adj.iter().map(|n| n.iter().map(|x| x.0).collect()).collect();
            let names: Vec<String> = self.routers.iter().map(|r| r.name.clone()).collect();
            self.paths[request] = Some(shortest_path(&adj, &names, src, dst));
        }
        self.paths[request].clone().flatten()
    }

    fn slots_needed(&self, path_len: usize, pos: usize) -> usize {
        let m = self.cfg.memories_per_request as usize;
        if pos == 0 || pos == path_len - 1 {
            m
        } else {
            2 * m
        }
    }

    fn fits(&self, path: &[usize]) -> bool {
        path.iter()
            .enumerate()
            .all(|(pos, &r)| self.routers[r].memory.free_slots().count() >= self.slots_needed(path.len(), pos))
    }

    fn link_between(&self, a: usize, b: usize) -> usize {
        self.adj[a].iter().find(|x| x.0 == b).expect("adjacent routers").1
    }

    fn grant(&mut self, tl: &mut Timeline<SimEvent>, request: usize, path: Vec<usize>) -> Result<(), HandlerError> {
        let now = tl.now();
        let m = self.cfg.memories_per_request as usize;
        let id = self.requests[request].id;
        let hops: Vec<(usize, bool)> = path
            .windows(2)
            .map(|w| {
                let link = self.link_between(w[0], w[1]);
                (link, self.links[link].routers[0] == w[0])
            })
            .collect();
        let mut channels: Vec<Channel> = (0..m)
            .map(|_| Channel {
                slots: vec![(None, None); path.len()],
                epochs: vec![0; hops.len()],
                segments: Vec::new(),
                done: false,
            })
            .collect();
        for (pos, &r) in path.iter().enumerate() {
            let free: Vec<usize> = self.routers[r].memory.free_slots().take(self.slots_needed(path.len(), pos)).collect();
            let mut free = free.into_iter();
            for ch in channels.iter_mut() {
                if pos > 0 {
                    ch.slots[pos].0 = free.next();
                }
                if pos + 1 < path.len() {
                    ch.slots[pos].1 = free.next();
                }
            }
            let router = &mut self.routers[r];
            for ch in &channels {
                for slot in [ch.slots[pos].0, ch.slots[pos].1].into_iter().flatten() {
                    router.memory.reserve(slot, id).map_err(hw)?;
                }
            }
            router.reservations += 1;
        }
        self.requests[request].granted_at = Some(now);
        self.requests[request].status = RequestStatus::Granted;
        self.totals.requests_granted += 1;
        for (c, ch) in channels.iter().enumerate() {
            for hop in 0..hops.len() {
                tl.schedule(
                    now,
                    hops[hop].0,
                    SimEvent::Attempt {
                        request,
                        channel: c,
                        hop,
                        epoch: ch.epochs[hop],
                    },
                )?;
            }
        }
        self.grants[request] = Some(Grant { path, hops, channels });
        Ok(())
    }

    fn on_arrival(&mut self, tl: &mut Timeline<SimEvent>, request: usize) -> Result<(), HandlerError> {
        match self.path_for(request) {
            None => {
                self.requests[request].status = RequestStatus::Rejected;
                self.totals.requests_rejected += 1;
            }
            Some(path) => {
                if self.fits(&path) {
                    self.grant(tl, request, path)?;
                } else {
                    self.requests[request].status = RequestStatus::Queued;
                    self.queue.push_back(request);
                }
            }
        }
        Ok(())
    }

    /// Memory slots (router, slot) at the two ends of hop `hop`.
    fn hop_memories(grant: &Grant, channel: usize, hop: usize) -> [(usize, usize); 2] {
        let ch = &grant.channels[channel];
        [
            (grant.path[hop], ch.slots[hop].1.expect("right slot")),
            (grant.path[hop + 1], ch.slots[hop + 1].0.expect("left slot")),
        ]
    }

    fn on_attempt(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
    ) -> Result<(), HandlerError> {
        let Some(grant) = &self.grants[request] else {
            return Ok(());
        };
        if grant.channels[channel].epochs[hop] != epoch || grant.channels[channel].done {
            return Ok(());
        }
        let now = tl.now();
        let (link_idx, forward) = grant.hops[hop];
        let mems = Self::hop_memories(grant, channel, hop);
        // port p of the BSM is fed by path end `ends[p]`
        let ends = if forward { [0, 1] } else { [1, 0] };
        let link = &self.links[link_idx];
        let delays = link.halves.map(|h| h.propagation_delay());
        let arrival = now + delays[0].max(delays[1]);
        let halves = link.halves;
        let mut photons: [Option<PhotonArrival>; 2] = [None, None];
        for port in 0..2 {
            let (router, slot) = mems[ends[port]];
            let emit_at = arrival - delays[port];
            let photon = self.routers[router]
                .memory
                .excite(slot, emit_at, tl.rng())
                .map_err(hw)?;
            photons[port] = photon.map(|p| PhotonArrival {
                photon: halves[port].transmit(p, tl.rng()),
                at: arrival,
            });
        }
        self.totals.link_attempts += 1;
        tl.schedule(
            arrival,
            link_idx,
            SimEvent::BsmArrival {
                request,
                channel,
                hop,
                epoch,
                attempt_at: now,
                photons,
            },
        )?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn on_bsm_arrival(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
        attempt_at: Picos,
        photons: [Option<PhotonArrival>; 2],
    ) -> Result<(), HandlerError> {
        let Some(grant) = &self.grants[request] else {
            return Ok(());
        };
        let link_idx = grant.hops[hop].0;
        let now = tl.now();
        let link = &mut self.links[link_idx];
        let outcome = link
            .bsm
            .measure(photons[0], photons[1], now, tl.rng())
            .map_err(hw)?;
        let herald_at = now + link.herald_delay[0].max(link.herald_delay[1]);
        tl.schedule(
            herald_at,
            link_idx,
            SimEvent::Herald {
                request,
                channel,
                hop,
                epoch,
                attempt_at,
                success: outcome.is_success(),
            },
        )?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn on_herald(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        hop: usize,
        epoch: u64,
        attempt_at: Picos,
        success: bool,
    ) -> Result<(), HandlerError> {
        let Some(grant) = &self.grants[request] else {
            return Ok(());
        };
        if grant.channels[channel].epochs[hop] != epoch || grant.channels[channel].done {
            return Ok(());
        }
        let now = tl.now();
        let mems = Self::hop_memories(grant, channel, hop);
        let link_idx = grant.hops[hop].0;
        if !success {
            let period = mems
                .iter()
                .map(|&(r, _)| self.routers[r].memory.params().period_ps())
                .max()
                .unwrap_or(0);
            tl.schedule(
                (attempt_at + period).max(now),
                link_idx,
                SimEvent::Attempt {
                    request,
                    channel,
                    hop,
                    epoch,
                },
            )?;
            return Ok(());
        }
        self.totals.link_successes += 1;
        let refs = mems.map(|(r, slot)| SlotRef { node: r, slot });
        let mut fidelity = 1.0f64;
        let mut expires_at = Picos::MAX;
        for (i, &(r, slot)) in mems.iter().enumerate() {
            let memory = &mut self.routers[r].memory;
            memory.entangle(slot, refs[1 - i], now).map_err(hw)?;
            fidelity = fidelity.min(memory.params().fidelity);
            expires_at = expires_at.min(now.saturating_add(memory.params().coherence_ps()));
        }
        let id = self.next_segment;
        self.next_segment += 1;
        self.grants[request].as_mut().expect("granted").channels[channel]
            .segments
            .push(Segment {
                id,
                start: hop,
                end: hop + 1,
                fidelity,
                expires_at,
            });
        tl.schedule(
            expires_at,
            link_idx,
            SimEvent::Expire {
                request,
                channel,
                segment: id,
            },
        )?;
        self.advance_channel(tl, request, channel)
    }

    /// Resets a segment's end memories and restarts generation on its hops.
    fn discard_segment(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        segment: &Segment,
    ) -> Result<(), HandlerError> {
        let now = tl.now();
        let grant = self.grants[request].as_mut().expect("granted");
        let ch = &mut grant.channels[channel];
        ch.segments.retain(|s| s.id != segment.id);
        let ends = [
            (grant.path[segment.start], ch.slots[segment.start].1),
            (grant.path[segment.end], ch.slots[segment.end].0),
        ];
        for (r, slot) in ends {
            self.routers[r].memory.reset(slot.expect("slot")).map_err(hw)?;
        }
        for hop in segment.start..segment.end {
            ch.epochs[hop] += 1;
            tl.schedule(
                now,
                grant.hops[hop].0,
                SimEvent::Attempt {
                    request,
                    channel,
                    hop,
                    epoch: ch.epochs[hop],
                },
            )?;
        }
        Ok(())
    }

    /// Delivers a finished end-to-end pair or performs the leftmost
    /// eligible swap, repeatedly, until nothing more can happen now.
    fn advance_channel(&mut self, tl: &mut Timeline<SimEvent>, request: usize, channel: usize) -> Result<(), HandlerError> {
        let now = tl.now();
        loop {
            let grant = self.grants[request].as_ref().expect("granted");
            let hops = grant.hops.len();
            let ch = &grant.channels[channel];
            if let Some(expired) = ch.segments.iter().find(|s| s.expires_at <= now).cloned() {
                self.totals.pairs_expired += 1;
                self.discard_segment(tl, request, channel, &expired)?;
                continue;
            }
            if let Some(full) = ch.segments.iter().find(|s| s.start == 0 && s.end == hops).cloned() {
                if full.fidelity >= self.cfg.target_fidelity {
                    self.deliver(tl, request, channel, &full)?;
                } else {
                    self.totals.pairs_discarded += 1;
                    self.discard_segment(tl, request, channel, &full)?;
                }
                return Ok(());
            }
            let swap = (1..hops).find_map(|k| {
                let left = ch.segments.iter().find(|s| s.end == k)?;
                let right = ch.segments.iter().find(|s| s.start == k)?;
                Some((k, left.clone(), right.clone()))
            });
            let Some((k, left, right)) = swap else {
                return Ok(());
            };
            self.totals.swap_attempts += 1;
            let succeeded = tl.rng().random_bool(self.cfg.swap_success_prob);
            if !succeeded {
                self.discard_segment(tl, request, channel, &left)?;
                self.discard_segment(tl, request, channel, &right)?;
                continue;
            }
            self.totals.swap_successes += 1;
            let grant = self.grants[request].as_mut().expect("granted");
            let ch = &mut grant.channels[channel];
            let middle = grant.path[k];
            for slot in [ch.slots[k].0, ch.slots[k].1] {
                self.routers[middle].memory.reset(slot.expect("slot")).map_err(hw)?;
            }
            let outer = [
                SlotRef {
                    node: grant.path[left.start],
                    slot: ch.slots[left.start].1.expect("slot"),
                },
                SlotRef {
                    node: grant.path[right.end],
                    slot: ch.slots[right.end].0.expect("slot"),
                },
            ];
            for (i, end) in outer.iter().enumerate() {
                let memory = &mut self.routers[end.node].memory;
                if let Some(SlotState::Entangled { since, .. }) = memory.state_at(end.slot, now) {
                    memory.entangle(end.slot, outer[1 - i], since).map_err(hw)?;
                }
            }
            let id = self.next_segment;
            self.next_segment += 1;
            let fused = Segment {
                id,
                start: left.start,
                end: right.end,
                fidelity: left.fidelity * right.fidelity,
                expires_at: left.expires_at.min(right.expires_at),
            };
            ch.segments.retain(|s| s.id != left.id && s.id != right.id);
            ch.segments.push(fused.clone());
            let target = grant.hops[k - 1].0;
            tl.schedule(
                fused.expires_at,
                target,
                SimEvent::Expire {
                    request,
                    channel,
                    segment: id,
                },
            )?;
        }
    }

    fn deliver(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        pair: &Segment,
    ) -> Result<(), HandlerError> {
        let grant = self.grants[request].as_mut().expect("granted");
        let last = grant.path.len() - 1;
        let ch = &mut grant.channels[channel];
        ch.segments.retain(|s| s.id != pair.id);
        ch.done = true;
        // the pair is handed to the application; memories go back to ground
        let ends = [(grant.path[0], ch.slots[0].1), (grant.path[last], ch.slots[last].0)];
        for (r, slot) in ends {
            self.routers[r].memory.reset(slot.expect("slot")).map_err(hw)?;
            self.routers[r].pairs += 1;
        }
        self.totals.pairs_completed += 1;
        self.requests[request].completed_pairs += 1;
        if grant.channels.iter().all(|c| c.done) {
            self.finish(tl, request)?;
        }
        Ok(())
    }

    fn finish(&mut self, tl: &mut Timeline<SimEvent>, request: usize) -> Result<(), HandlerError> {
        let now = tl.now();
        let grant = self.grants[request].take().expect("granted");
        for (pos, &r) in grant.path.iter().enumerate() {
            for ch in &grant.channels {
                for slot in [ch.slots[pos].0, ch.slots[pos].1].into_iter().flatten() {
                    self.routers[r].memory.release(slot).map_err(hw)?;
                }
            }
        }
        self.requests[request].completed_at = Some(now);
        self.requests[request].status = RequestStatus::Completed;
        self.totals.requests_completed += 1;
        self.admit_queued(tl)
    }

    /// Grants every queued request that now fits, oldest first.
    fn admit_queued(&mut self, tl: &mut Timeline<SimEvent>) -> Result<(), HandlerError> {
        let mut i = 0;
        while i < self.queue.len() {
            // nothing can fit once every router is full; leave the rest queued
            if self.routers.iter().all(|r| r.memory.free_slots().next().is_none()) {
                break;
            }
            let request = self.queue[i];
            let path = self.path_for(request).expect("queued requests are routable");
            if self.fits(&path) {
                self.queue.remove(i);
                self.grant(tl, request, path)?;
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    fn on_expire(
        &mut self,
        tl: &mut Timeline<SimEvent>,
        request: usize,
        channel: usize,
        segment: u64,
    ) -> Result<(), HandlerError> {
        let Some(grant) = &self.grants[request] else {
            return Ok(());
        };
        let Some(seg) = grant.channels[channel].segments.iter().find(|s| s.id == segment).cloned() else {
            return Ok(());
        };
        self.totals.pairs_expired += 1;
        self.discard_segment(tl, request, channel, &seg)?;
        self.advance_channel(tl, request, channel)
    }

    fn audit(&mut self, now: Picos) {
        self.diagnostics.audited_events += 1;
        for router in &mut self.routers {
            let used = router.memory.occupied();
            router.peak_occupancy = router.peak_occupancy.max(used);
            if used > router.memory.size() {
                self.diagnostics.violations.push(format!(
                    "{}: {used} slots in use of {} at {now} ps",
                    router.name,
                    router.memory.size()
                ));
            }
            let coherence = router.memory.params().coherence_ps();
            for slot in 0..router.memory.size() {
                let s = router.memory.slot(slot).expect("slot");
                if let SlotState::Entangled { since, .. } = s.state {
                    if s.reserved_by.is_none() {
                        self.diagnostics
                            .violations
                            .push(format!("{} slot {slot}: entangled but unreserved", router.name));
                    }
                    if now > since.saturating_add(coherence) {
                        self.diagnostics
                            .violations
                            .push(format!("{} slot {slot}: entangled past coherence time", router.name));
                    }
                }
            }
        }
    }
}

impl EventHandler<SimEvent> for World {
    fn handle(&mut self, event: Event<SimEvent>, tl: &mut Timeline<SimEvent>) -> Result<(), HandlerError> {
        match event.payload {
            SimEvent::Arrival { request } => self.on_arrival(tl, request)?,
            SimEvent::Attempt {
                request,
                channel,
                hop,
                epoch,
            } => self.on_attempt(tl, request, channel, hop, epoch)?,
            SimEvent::BsmArrival {
                request,
                channel,
                hop,
                epoch,
                attempt_at,
                photons,
            } => self.on_bsm_arrival(tl, request, channel, hop, epoch, attempt_at, photons)?,
            SimEvent::Herald {
                request,
                channel,
                hop,
                epoch,
                attempt_at,
                success,
            } => self.on_herald(tl, request, channel, hop, epoch, attempt_at, success)?,
            SimEvent::Expire {
                request,
                channel,
                segment,
            } => self.on_expire(tl, request, channel, segment)?,
        }
        if self.audit {
            self.audit(tl.now());
        }
        Ok(())
    }
}

/// A configured run: hardware instantiated from templates, ready to go.
pub struct Simulation {
    world: World,
    timeline: Timeline<SimEvent>,
}

impl Simulation {
    /// Snapshots the templates into per-node hardware state. Later edits to
    /// the topology or store do not affect the run.
    pub fn new(
        topo: &Topology,
        templates: &TemplateStore,
        cfg: &SimulationConfig,
        options: SimulationOptions,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let router_nodes: Vec<_> = topo.routers().collect();
        if router_nodes.len() < 2 {
            return Err(SimError::InsufficientRouters(router_nodes.len()));
        }
        let mut routers = Vec::new();
        let mut by_name = BTreeMap::new();
        for node in &router_nodes {
            let ResolvedNode::Router {
                memory_array_size,
                memory,
            } = templates.resolve(node)?
            else {
                unreachable!("router templates resolve to routers")
            };
            by_name.insert(node.name.clone(), routers.len());
            routers.push(RouterState {
                name: node.name.clone(),
                memory: MemoryArray::new(routers.len(), memory_array_size, memory),
                reservations: 0,
                pairs: 0,
                peak_occupancy: 0,
            });
        }
        let mut links = Vec::new();
        let mut adj = vec![Vec::new(); routers.len()];
        for bsm_node in topo.nodes().iter().filter(|n| n.node_type == NodeType::BsmNode) {
            let ResolvedNode::Bsm(params) = templates.resolve(bsm_node)? else {
                unreachable!("BSM templates resolve to BSMs")
            };
            let Some((a, b)) = topo.bsm_endpoints(&bsm_node.name) else {
                continue;
            };
            let ends = [a, b];
            let half = |x: &str| topo.edge_between(x, &bsm_node.name).expect("half edge").channel();
            let herald = |x: &str| topo.classical_delay(&bsm_node.name, x).expect("half edge");
            let idx = links.len();
            let (ra, rb) = (by_name[a], by_name[b]);
            adj[ra].push((rb, idx));
            adj[rb].push((ra, idx));
            links.push(LinkState {
                routers: [ra, rb],
                halves: ends.map(half),
                herald_delay: ends.map(herald),
                bsm: BsmState::new(params).with_dark_counts(options.dark_counts),
            });
        }
        for n in &mut adj {
            n.sort_by(|x, y| routers[x.0].name.cmp(&routers[y.0].name));
        }
        let mut timeline = Timeline::new(cfg.duration_ps(), cfg.seed);
        if let Some(progress) = options.progress {
            timeline = timeline.with_progress(progress);
        }
        let names: Vec<String> = routers.iter().map(|r| r.name.clone()).collect();
        let requests = generate_requests_with(cfg, &names, timeline.rng())?;
        for (i, r) in requests.iter().enumerate() {
            timeline.schedule(r.arrival_time, by_name[&r.source], SimEvent::Arrival { request: i })?;
        }
        let n = requests.len();
        let world = World {
            cfg: cfg.clone(),
            routers,
            links,
            adj,
            totals: Totals {
                seed: cfg.seed,
                requests_generated: n as u64,
                ..Default::default()
            },
            requests,
            paths: vec![None; n],
            grants: (0..n).map(|_| None).collect(),
            queue: VecDeque::new(),
            next_segment: 0,
            audit: options.audit,
            diagnostics: Diagnostics::default(),
        };
        Ok(Simulation { world, timeline })
    }

    pub fn progress_handle(&self) -> ProgressHandle {
        self.timeline.progress_handle()
    }

    pub fn run(mut self) -> Result<SimulationOutcome, SimError> {
        let stats = self.timeline.run(&mut self.world)?;
        let mut world = self.world;
        world.totals.events_processed = stats.events_processed;
        world.totals.requests_incomplete =
            world.totals.requests_generated - world.totals.requests_completed - world.totals.requests_rejected;
        let duration_s = world.cfg.duration_s;
        let nodes = world
            .routers
            .iter()
            .map(|r| {
                let waits: Vec<Picos> = world
                    .requests
                    .iter()
                    .filter(|q| q.source == r.name || q.destination == r.name)
                    .filter_map(Request::wait_time)
                    .collect();
                let avg_wait_time_ps = if waits.is_empty() {
                    0.0
                } else {
                    waits.iter().map(|&w| w as f64).sum::<f64>() / waits.len() as f64
                };
                NodeReport {
                    name: r.name.clone(),
                    avg_wait_time_ps,
                    reservations: r.reservations,
                    throughput_pairs_per_s: r.pairs as f64 / duration_s,
                }
            })
            .collect();
        world.diagnostics.peak_occupancy = world
            .routers
            .iter()
            .map(|r| (r.name.clone(), r.peak_occupancy, r.memory.size()))
            .collect();
        Ok(SimulationOutcome {
            report: SimulationReport {
                name: world.cfg.name.clone(),
                duration_s,
                nodes,
                totals: world.totals,
            },
            requests: world.requests,
            diagnostics: world.diagnostics,
        })
    }
}

/// Runs the random-request application to `cfg.duration_s`.
pub fn run_simulation(
    topo: &Topology,
    templates: &TemplateStore,
    cfg: &SimulationConfig,
) -> Result<SimulationReport, SimError> {
    Ok(Simulation::new(topo, templates, cfg, SimulationOptions::default())?
        .run()?
        .report)
}
