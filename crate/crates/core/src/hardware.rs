//! Stochastic models of quantum memories, photon detectors, Bell state
//! measurement stations and fiber channels.
//!
//! All times are integer picoseconds. Parameters carry the units used in
//! the workspace files (seconds, hertz, meters, dB/km) and are converted
//! here.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in picoseconds.
pub type Picos = u64;

pub const PS_PER_SECOND: f64 = 1e12;

/// Speed of light in silica fiber, roughly two thirds of `c`.
pub const FIBER_LIGHT_SPEED: f64 = 2e8;

/// Converts seconds to picoseconds, rounding to the nearest tick.
pub fn seconds_to_ps(seconds: f64) -> Picos {
    (seconds * PS_PER_SECOND).round() as Picos
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HardwareError {
    #[error("memory slot {slot} is busy")]
    SlotBusy { slot: usize },
    #[error("memory slot {slot} out of range (array size {size})")]
    SlotOutOfRange { slot: usize, size: usize },
    #[error("photons arrived {separation} ps apart, outside the {window} ps coincidence window")]
    CoincidenceWindowViolation { separation: Picos, window: Picos },
}

impl HardwareError {
    pub fn code(&self) -> &'static str {
        match self {
            HardwareError::SlotBusy { .. } => "SlotBusy",
            HardwareError::SlotOutOfRange { .. } => "SlotOutOfRange",
            HardwareError::CoincidenceWindowViolation { .. } => "CoincidenceWindowViolation",
        }
    }
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

/// One fiber span. Every topology edge carries a classical and a quantum
/// channel over the same span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub distance_m: f64,
    pub attenuation_db_km: f64,
    pub light_speed: f64,
}

impl ChannelParams {
    pub fn new(distance_m: f64, attenuation_db_km: f64) -> Self {
        ChannelParams {
            distance_m,
            attenuation_db_km,
            light_speed: FIBER_LIGHT_SPEED,
        }
    }

    /// Time of flight `L / c`, rounded to the nearest picosecond.
    pub fn propagation_delay(&self) -> Picos {
        (self.distance_m * PS_PER_SECOND / self.light_speed).round() as Picos
    }

    /// Photon survival probability `10^(-L_km * alpha / 10)`.
    pub fn transmission_probability(&self) -> f64 {
        let loss_db = self.distance_m / 1000.0 * self.attenuation_db_km;
        10f64.powf(-loss_db / 10.0)
    }

    /// Sends a photon through the quantum channel; a lost photon stays
    /// in the returned value with `alive == false`.
    pub fn transmit<R: Rng + ?Sized>(&self, mut photon: Photon, rng: &mut R) -> Photon {
        if photon.alive {
            photon.alive = bernoulli(rng, self.transmission_probability());
        }
        photon
    }
}

pub fn propagation_delay(ch: &ChannelParams) -> Picos {
    ch.propagation_delay()
}

pub fn transmission_probability(ch: &ChannelParams) -> f64 {
    ch.transmission_probability()
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random_bool(p.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Memories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    pub coherence_time_s: f64,
    /// Inverse of the time a memory needs to return to the ground state
    /// after an excitation.
    pub frequency_hz: f64,
    pub efficiency: f64,
    pub fidelity: f64,
}

impl MemoryParams {
    pub fn period_ps(&self) -> Picos {
        seconds_to_ps(1.0 / self.frequency_hz)
    }

    pub fn coherence_ps(&self) -> Picos {
        seconds_to_ps(self.coherence_time_s)
    }
}

/// A memory slot addressed by owning node index and slot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotRef {
    pub node: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Ground,
    /// Excited at the given time; back in the ground state one memory
    /// period later.
    Excited { at: Picos },
    Entangled { partner: SlotRef, since: Picos },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub state: SlotState,
    pub reserved_by: Option<u64>,
}

/// Homogeneous array of single-atom memories owned by one router.
#[derive(Debug, Clone)]
pub struct MemoryArray {
    node: usize,
    params: MemoryParams,
    slots: Vec<Slot>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub emitted_at: Picos,
    pub source: SlotRef,
    pub alive: bool,
}

impl MemoryArray {
    pub fn new(node: usize, size: usize, params: MemoryParams) -> Self {
        MemoryArray {
            node,
            params,
            slots: vec![
                Slot {
                    state: SlotState::Ground,
                    reserved_by: None,
                };
                size
            ],
        }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn slot(&self, slot: usize) -> Option<&Slot> {
        self.slots.get(slot)
    }

    fn slot_mut(&mut self, slot: usize) -> Result<&mut Slot, HardwareError> {
        let size = self.slots.len();
        self.slots
            .get_mut(slot)
            .ok_or(HardwareError::SlotOutOfRange { slot, size })
    }

    /// State of a slot as seen at `now`: an excitation older than one
    /// period has decayed back to ground.
    pub fn state_at(&self, slot: usize, now: Picos) -> Option<SlotState> {
        let s = self.slots.get(slot)?;
        Some(match s.state {
            SlotState::Excited { at } if now >= at + self.params.period_ps() => SlotState::Ground,
            other => other,
        })
    }

    /// Excites a slot. Emits a photon with probability `efficiency`.
    pub fn excite<R: Rng + ?Sized>(
        &mut self,
        slot: usize,
        now: Picos,
        rng: &mut R,
    ) -> Result<Option<Photon>, HardwareError> {
        match self.state_at(slot, now) {
            None => {
                return Err(HardwareError::SlotOutOfRange {
                    slot,
                    size: self.slots.len(),
                })
            }
            Some(SlotState::Ground) => {}
            Some(_) => return Err(HardwareError::SlotBusy { slot }),
        }
        let efficiency = self.params.efficiency;
        let node = self.node;
        self.slot_mut(slot)?.state = SlotState::Excited { at: now };
        Ok(bernoulli(rng, efficiency).then_some(Photon {
            emitted_at: now,
            source: SlotRef { node, slot },
            alive: true,
        }))
    }

    pub fn entangle(&mut self, slot: usize, partner: SlotRef, since: Picos) -> Result<(), HardwareError> {
        self.slot_mut(slot)?.state = SlotState::Entangled { partner, since };
        Ok(())
    }

    /// Forces a slot back to the ground state (measurement, swap, expiry).
    pub fn reset(&mut self, slot: usize) -> Result<(), HardwareError> {
        self.slot_mut(slot)?.state = SlotState::Ground;
        Ok(())
    }

    pub fn reserve(&mut self, slot: usize, request: u64) -> Result<(), HardwareError> {
        let s = self.slot_mut(slot)?;
        if s.reserved_by.is_some() {
            return Err(HardwareError::SlotBusy { slot });
        }
        s.reserved_by = Some(request);
        Ok(())
    }

    pub fn release(&mut self, slot: usize) -> Result<(), HardwareError> {
        let s = self.slot_mut(slot)?;
        s.reserved_by = None;
        s.state = SlotState::Ground;
        Ok(())
    }

    /// Slots neither reserved nor holding entanglement.
    pub fn free_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| {
            (s.reserved_by.is_none() && !matches!(s.state, SlotState::Entangled { .. })).then_some(i)
        })
    }

    /// Reserved or entangled slots.
    pub fn occupied(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.reserved_by.is_some() || matches!(s.state, SlotState::Entangled { .. }))
            .count()
    }
}

pub fn memory_excite<R: Rng + ?Sized>(
    array: &mut MemoryArray,
    slot: usize,
    now: Picos,
    rng: &mut R,
) -> Result<Option<Photon>, HardwareError> {
    array.excite(slot, now, rng)
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// Inverse dead time. Zero disables the dead time.
    pub count_rate_hz: f64,
    pub dark_count_rate_hz: f64,
    pub time_resolution_ps: Picos,
}

impl DetectorParams {
    pub fn dead_time_ps(&self) -> Picos {
        if self.count_rate_hz > 0.0 {
            (PS_PER_SECOND / self.count_rate_hz).ceil() as Picos
        } else {
            0
        }
    }

    /// Rounds to the nearest multiple of the time resolution; ties go down.
    pub fn quantize(&self, t: Picos) -> Picos {
        quantize(t, self.time_resolution_ps)
    }
}

pub(crate) fn quantize(t: Picos, resolution: Picos) -> Picos {
    let res = resolution.max(1) as u128;
    let k = (2 * t as u128 + res - 1) / (2 * res);
    (k * res) as Picos
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub timestamp: Picos,
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    pub params: DetectorParams,
    last_detection: Option<Picos>,
}

impl DetectorState {
    pub fn new(params: DetectorParams) -> Self {
        DetectorState {
            params,
            last_detection: None,
        }
    }

    pub fn last_detection(&self) -> Option<Picos> {
        self.last_detection
    }

    fn in_dead_time(&self, t: Picos) -> bool {
        match self.last_detection {
            Some(last) => t < last.saturating_add(self.params.dead_time_ps()),
            None => false,
        }
    }

    /// Offers a photon (or a dark click when `is_real_photon` is false)
    /// to the detector.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        arrival: Picos,
        is_real_photon: bool,
        rng: &mut R,
    ) -> Option<DetectionEvent> {
        let timestamp = self.params.quantize(arrival);
        if self.in_dead_time(timestamp) {
            return None;
        }
        if is_real_photon && !bernoulli(rng, self.params.efficiency) {
            return None;
        }
        self.last_detection = Some(timestamp);
        Some(DetectionEvent { timestamp })
    }
}

pub fn detector_observe<R: Rng + ?Sized>(
    det: &mut DetectorState,
    arrival: Picos,
    is_real_photon: bool,
    rng: &mut R,
) -> Option<DetectionEvent> {
    det.observe(arrival, is_real_photon, rng)
}

/// Dark clicks over `[t0, t1]` as a homogeneous Poisson process, quantized
/// and thinned by the dead time.
pub fn dark_count_events<R: Rng + ?Sized>(
    det: &DetectorParams,
    window: (Picos, Picos),
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let (t0, t1) = window;
    let mut out = Vec::new();
    if det.dark_count_rate_hz <= 0.0 || t1 <= t0 {
        return out;
    }
    let rate_per_ps = det.dark_count_rate_hz / PS_PER_SECOND;
    let gaps = rand_distr::Exp::new(rate_per_ps).expect("positive rate");
    let dead = det.dead_time_ps();
    let mut t = t0 as f64;
    let mut last: Option<Picos> = None;
    loop {
        t += rng.sample(gaps);
        if t > t1 as f64 {
            break;
        }
        let stamp = det.quantize(t.round() as Picos);
        if stamp < t0 || stamp > t1 {
            continue;
        }
        if matches!(last, Some(l) if stamp < l + dead) {
            continue;
        }
        last = Some(stamp);
        out.push(DetectionEvent { timestamp: stamp });
    }
    out
}

// ---------------------------------------------------------------------------
// Bell state measurement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsmParams {
    pub detector: DetectorParams,
    pub coincidence_window_ps: Picos,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonArrival {
    pub photon: Photon,
    pub at: Picos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmOutcome {
    /// Heralded projection; linear optics resolves only Psi+ (1) and Psi- (2).
    Success { bell_index: u8 },
    Failure,
}

impl BsmOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, BsmOutcome::Success { .. })
    }
}

/// A BSM station: two detectors, one per input port.
#[derive(Debug, Clone)]
pub struct BsmState {
    pub params: BsmParams,
    pub detectors: [DetectorState; 2],
    /// Lets dark clicks stand in for missing photons.
    pub dark_counts: bool,
}

impl BsmState {
    pub fn new(params: BsmParams) -> Self {
        BsmState {
            params,
            detectors: [DetectorState::new(params.detector), DetectorState::new(params.detector)],
            dark_counts: false,
        }
    }

    pub fn with_dark_counts(mut self, enabled: bool) -> Self {
        self.dark_counts = enabled;
        self
    }

    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        photon_a: Option<PhotonArrival>,
        photon_b: Option<PhotonArrival>,
        now: Picos,
        rng: &mut R,
    ) -> Result<BsmOutcome, HardwareError> {
        if let (Some(a), Some(b)) = (&photon_a, &photon_b) {
            let separation = a.at.abs_diff(b.at);
            if separation > self.params.coincidence_window_ps {
                return Err(HardwareError::CoincidenceWindowViolation {
                    separation,
                    window: self.params.coincidence_window_ps,
                });
            }
        }
        let window = (now, now + self.params.coincidence_window_ps);
        let mut clicks = [false; 2];
        for (port, arrival) in [photon_a, photon_b].into_iter().enumerate() {
            let detector = &mut self.detectors[port];
            clicks[port] = match arrival {
                Some(a) if a.photon.alive => detector.observe(a.at, true, rng).is_some(),
                _ => false,
            };
            if !clicks[port] && self.dark_counts {
                let dark = dark_count_events(&detector.params, window, rng);
                if let Some(first) = dark.first() {
                    clicks[port] = detector.observe(first.timestamp, false, rng).is_some();
                }
            }
        }
        if !(clicks[0] && clicks[1]) || !rng.random_bool(0.5) {
            return Ok(BsmOutcome::Failure);
        }
        let bell_index = if rng.random_bool(0.5) { 1 } else { 2 };
        Ok(BsmOutcome::Success { bell_index })
    }
}

pub fn bsm_measure<R: Rng + ?Sized>(
    bsm: &mut BsmState,
    photon_a: Option<PhotonArrival>,
    photon_b: Option<PhotonArrival>,
    now: Picos,
    rng: &mut R,
) -> Result<BsmOutcome, HardwareError> {
    bsm.measure(photon_a, photon_b, now, rng)
}
