//! Discrete-event timeline.
//!
//! Events are ordered by `(time, seq)` where `seq` is the order in which
//! they were scheduled. The timeline owns the single seeded generator used
//! by every handler, so a run is fully determined by its seed and initial
//! events.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hardware::Picos;

pub type EntityId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: Picos,
    pub seq: u64,
    pub target: EntityId,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.time, self.0.seq).cmp(&(other.0.time, other.0.seq)).reverse()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KernelError {
    #[error("event at {time} ps scheduled in the past (now {now} ps)")]
    PastEvent { time: Picos, now: Picos },
    #[error("handler for entity {target} failed on event #{seq} at {time} ps ({payload}): {message}")]
    HandlerFailure {
        target: EntityId,
        time: Picos,
        seq: u64,
        payload: String,
        message: String,
    },
}

impl KernelError {
    pub fn code(&self) -> &'static str {
        match self {
            KernelError::PastEvent { .. } => "PastEvent",
            KernelError::HandlerFailure { .. } => "HandlerFailure",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct HandlerError(pub String);

impl From<String> for HandlerError {
    fn from(s: String) -> Self {
        HandlerError(s)
    }
}

impl From<&str> for HandlerError {
    fn from(s: &str) -> Self {
        HandlerError(s.to_string())
    }
}

impl From<KernelError> for HandlerError {
    fn from(e: KernelError) -> Self {
        HandlerError(e.to_string())
    }
}

pub trait EventHandler<P> {
    fn handle(&mut self, event: Event<P>, timeline: &mut Timeline<P>) -> Result<(), HandlerError>;
}

impl<P, F> EventHandler<P> for F
where
    F: FnMut(Event<P>, &mut Timeline<P>) -> Result<(), HandlerError>,
{
    fn handle(&mut self, event: Event<P>, timeline: &mut Timeline<P>) -> Result<(), HandlerError> {
        self(event, timeline)
    }
}

/// Shared, lock-free view of a timeline's progress in `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct ProgressHandle(Arc<AtomicU64>);

impl ProgressHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(AtomicOrdering::Acquire))
    }

    fn publish(&self, value: f64) {
        // progress only moves forward
        self.0.fetch_max(value.to_bits(), AtomicOrdering::AcqRel);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_time: Picos,
}

pub struct Timeline<P> {
    now: Picos,
    stop_time: Picos,
    queue: BinaryHeap<Queued<P>>,
    next_seq: u64,
    rng: ChaCha8Rng,
    progress: ProgressHandle,
    finished: bool,
}

impl<P> Timeline<P> {
    pub fn new(stop_time: Picos, seed: u64) -> Self {
        Timeline {
            now: 0,
            stop_time,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            progress: ProgressHandle::new(),
            finished: false,
        }
    }

    /// Publishes progress into an externally owned handle.
    pub fn with_progress(mut self, progress: ProgressHandle) -> Self {
        self.progress = progress;
        self
    }

    pub fn now(&self) -> Picos {
        self.now
    }

    pub fn stop_time(&self) -> Picos {
        self.stop_time
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn progress_handle(&self) -> ProgressHandle {
        self.progress.clone()
    }

    pub fn progress(&self) -> f64 {
        if self.finished {
            return 1.0;
        }
        if self.stop_time == 0 {
            return 0.0;
        }
        (self.now as f64 / self.stop_time as f64).min(1.0)
    }

    /// Enqueues an event and returns its sequence number.
    pub fn schedule(&mut self, time: Picos, target: EntityId, payload: P) -> Result<u64, KernelError> {
        if time < self.now {
            return Err(KernelError::PastEvent { time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            time,
            seq,
            target,
            payload,
        }));
        Ok(seq)
    }

    /// Processes every event with `time <= stop_time`, then advances the
    /// clock to `stop_time`. Later events stay queued.
    pub fn run<H: EventHandler<P>>(&mut self, handler: &mut H) -> Result<RunStats, KernelError>
    where
        P: Debug + Clone,
    {
        let mut processed = 0;
        while let Some(head) = self.queue.peek() {
            if head.0.time > self.stop_time {
                break;
            }
            let Queued(event) = self.queue.pop().expect("peeked");
            self.now = event.time;
            let (target, time, seq) = (event.target, event.time, event.seq);
            let payload = event.payload.clone();
            handler
                .handle(event, self)
                .map_err(|e| KernelError::HandlerFailure {
                    target,
                    time,
                    seq,
                    payload: format!("{payload:?}"),
                    message: e.0,
                })?;
            processed += 1;
            self.progress.publish(self.progress());
        }
        self.now = self.now.max(self.stop_time);
        self.finished = true;
        self.progress.publish(1.0);
        Ok(RunStats {
            events_processed: processed,
            final_time: self.now,
        })
    }
}
