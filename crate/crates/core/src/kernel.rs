//! Discrete-event engine: a tick clock, an ordered event queue and a seeded
//! random source.
//!
//! One tick is 100 ms of simulated time. Events scheduled for the same tick
//! fire in insertion order. After all events of tick `t` are dispatched, the
//! handler's per-tick hook runs once for the interval `[t, t+1)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Ticks per simulated second.
pub const TICKS_PER_SECOND: u64 = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule at tick {at} when the clock is at tick {now}")]
    SchedulingInPast { at: u64, now: u64 },
    #[error("cannot run backwards to tick {end} from tick {now}")]
    EndInPast { end: u64, now: u64 },
    #[error("{0} s is not a multiple of 0.1 s")]
    NotOnTickGrid(f64),
}

/// Simulated time in 100 ms ticks.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub fn from_secs_whole(secs: u64) -> Self {
        SimTime(secs * TICKS_PER_SECOND)
    }

    /// Converts seconds to ticks; only multiples of 0.1 s are accepted.
    pub fn from_secs(secs: f64) -> Result<Self, KernelError> {
        if !secs.is_finite() || secs < 0.0 {
            return Err(KernelError::NotOnTickGrid(secs));
        }
        let scaled = secs * TICKS_PER_SECOND as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 {
            return Err(KernelError::NotOnTickGrid(secs));
        }
        Ok(SimTime(rounded as u64))
    }

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn is_whole_second(self) -> bool {
        self.0.is_multiple_of(TICKS_PER_SECOND)
    }

    pub fn saturating_sub(self, ticks: u64) -> SimTime {
        SimTime(self.0.saturating_sub(ticks))
    }

    pub fn plus_ticks(self, ticks: u64) -> SimTime {
        SimTime(self.0 + ticks)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug)]
pub struct QueuedEvent<A> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub action: A,
}

impl<A> PartialEq for QueuedEvent<A> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<A> Eq for QueuedEvent<A> {}

impl<A> Ord for QueuedEvent<A> {
    // Reversed so that BinaryHeap pops the smallest (fire_at, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<A> PartialOrd for QueuedEvent<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Portable seeded generator (ChaCha8). Same seed, same stream everywhere.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn range_u64(&mut self, low: u64, high_exclusive: u64) -> u64 {
        self.inner.random_range(low..high_exclusive)
    }

    /// Zero-mean gaussian draw. A non-positive deviation draws nothing.
    pub fn gaussian(&mut self, std_dev: f64) -> f64 {
        if std_dev <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std_dev)
            .map(|n| n.sample(&mut self.inner))
            .unwrap_or(0.0)
    }
}

/// Receives dispatched events and the per-tick hook.
pub trait Handler<A> {
    fn on_event(&mut self, kernel: &mut Kernel<A>, action: A);

    /// Runs once per elapsed tick, after that tick's events.
    fn on_tick(&mut self, _kernel: &mut Kernel<A>) {}
}

pub struct Kernel<A> {
    now: SimTime,
    next_seq: u64,
    next_hook: SimTime,
    fired_total: u64,
    queue: BinaryHeap<QueuedEvent<A>>,
    rng: SeededRng,
}

impl<A> Kernel<A> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            next_hook: SimTime::ZERO,
            fired_total: 0,
            queue: BinaryHeap::new(),
            rng: SeededRng::new(seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn fired_total(&self) -> u64 {
        self.fired_total
    }

    pub fn schedule(&mut self, at: SimTime, action: A) -> Result<EventId, KernelError> {
        if at < self.now {
            return Err(KernelError::SchedulingInPast {
                at: at.0,
                now: self.now.0,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(QueuedEvent {
            fire_at: at,
            seq,
            action,
        });
        Ok(EventId(seq))
    }

    /// Pops the next event due at or before `limit`.
    fn pop_due(&mut self, limit: SimTime) -> Option<QueuedEvent<A>> {
        if self.queue.peek().is_some_and(|e| e.fire_at <= limit) {
            self.queue.pop()
        } else {
            None
        }
    }

    /// Dispatches every event with `fire_at <= end` and runs the tick hook
    /// for each tick in `[now, end)` not yet hooked. Returns the number of
    /// events fired by this call.
    pub fn run_until<H: Handler<A>>(
        &mut self,
        end: SimTime,
        handler: &mut H,
    ) -> Result<u64, KernelError> {
        if end < self.now {
            return Err(KernelError::EndInPast {
                end: end.0,
                now: self.now.0,
            });
        }
        let mut fired = 0;
        let mut tick = self.now;
        loop {
            while let Some(event) = self.pop_due(tick) {
                self.now = tick.max(event.fire_at);
                fired += 1;
                self.fired_total += 1;
                handler.on_event(self, event.action);
            }
            self.now = tick;
            if tick >= end {
                break;
            }
            if tick >= self.next_hook {
                handler.on_tick(self);
                self.next_hook = tick.plus_ticks(1);
            }
            tick = tick.plus_ticks(1);
        }
        Ok(fired)
    }
}
