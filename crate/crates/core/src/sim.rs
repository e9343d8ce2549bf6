//! Deterministic discrete-event engine: virtual clock, event queue and seeded randomness.
//!
//! Time is integer nanoseconds. Events that share a fire time are processed in
//! insertion order, so a run is fully determined by its configuration and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;

/// Virtual time in nanoseconds.
pub type SimTime = u64;

/// Identifier returned by [`Scheduler::schedule`]. Equal to the event's sequence number.
pub type EventId = u64;

/// A scheduled action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<A> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub payload: A,
}

struct Entry<A>(Event<A>);

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_time == other.0.fire_time && self.0.sequence == other.0.sequence
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_time, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_time, other.0.sequence).cmp(&(self.0.fire_time, self.0.sequence))
    }
}

/// Event queue plus the virtual clock it drives.
pub struct Scheduler<A> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<Entry<A>>,
    processed: u64,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Self {
            now: 0,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Number of events handed out by [`Scheduler::pop`] so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueue `payload` to fire at `fire_time`. Times in the past are rejected, never clamped.
    pub fn schedule(&mut self, fire_time: SimTime, payload: A) -> Result<EventId, SimError> {
        if fire_time < self.now {
            return Err(SimError::Causality {
                now: self.now,
                requested: fire_time,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(Entry(Event {
            fire_time,
            sequence,
            payload,
        }));
        Ok(sequence)
    }

    /// Schedule relative to the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, payload: A) -> Result<EventId, SimError> {
        self.schedule(self.now + delay, payload)
    }

    /// Remove the next event and advance the clock to its fire time.
    pub fn pop(&mut self) -> Option<Event<A>> {
        let Entry(event) = self.queue.pop()?;
        debug_assert!(event.fire_time >= self.now);
        self.now = event.fire_time;
        self.processed += 1;
        Some(event)
    }

    /// Process events in `(fire_time, sequence)` order until the queue is empty.
    ///
    /// Returns the fire time of the last processed event, or 0 when nothing ran.
    /// The first handler error aborts the run.
    pub fn run_until_idle<E, F>(&mut self, mut handler: F) -> Result<SimTime, E>
    where
        E: From<SimError>,
        F: FnMut(&mut Self, Event<A>) -> Result<(), E>,
    {
        let mut last = 0;
        while let Some(event) = self.pop() {
            last = event.fire_time;
            handler(self, event)?;
        }
        Ok(last)
    }
}

/// Seeded generator; identical seeds give identical streams on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this seed, e.g. one per PE.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}
