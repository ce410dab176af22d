//! Simulated clock, event queue and transfer-time model.
//!
//! Events are dequeued in `(due_time, sequence_number)` order, where the
//! sequence number is assigned at enqueue. Equal due times therefore run in
//! FIFO order and a run is fully determined by its inputs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{duration_millis, Timestamp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimNetError {
    #[error("cannot schedule an event at {due} when the clock is already at {now}")]
    SchedulingInPast { due: Timestamp, now: Timestamp },
    #[error("bandwidth must be positive")]
    ZeroBandwidth,
}

/// Serialized single-connection link: every request pays a fixed overhead
/// plus its bytes divided by the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkModel {
    bandwidth: u64,
    per_request_overhead_ms: u64,
}

impl NetworkModel {
    /// Bytes per simulated second.
    pub const DEFAULT_BANDWIDTH: u64 = 25_000;
    pub const DEFAULT_OVERHEAD: Duration = Duration::from_millis(5);

    pub fn new(bandwidth: u64, per_request_overhead: Duration) -> Result<Self, SimNetError> {
        if bandwidth == 0 {
            return Err(SimNetError::ZeroBandwidth);
        }
        Ok(Self { bandwidth, per_request_overhead_ms: duration_millis(per_request_overhead) })
    }

    pub fn bandwidth(&self) -> u64 {
        self.bandwidth
    }

    pub fn per_request_overhead(&self) -> Duration {
        Duration::from_millis(self.per_request_overhead_ms)
    }

    /// `overhead + bytes / bandwidth`, rounded up to the millisecond.
    pub fn transfer_time(&self, payload_bytes: u64) -> Duration {
        let numerator = u128::from(payload_bytes) * 1000;
        let bandwidth = u128::from(self.bandwidth);
        let wire_ms = numerator.div_ceil(bandwidth) as u64;
        Duration::from_millis(self.per_request_overhead_ms + wire_ms)
    }
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self::new(Self::DEFAULT_BANDWIDTH, Self::DEFAULT_OVERHEAD).expect("default network is valid")
    }
}

struct Scheduled<E> {
    due: Timestamp,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

/// Monotone simulated clock with a pending-event queue.
pub struct SimClock<E> {
    now: Timestamp,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self { now: Timestamp::ZERO, next_seq: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, due: Timestamp, event: E) -> Result<(), SimNetError> {
        if due < self.now {
            return Err(SimNetError::SchedulingInPast { due, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { due, seq, event }));
        Ok(())
    }

    /// Pops the next event due at or before `horizon`, moving the clock to
    /// its due time.
    pub fn pop_due(&mut self, horizon: Timestamp) -> Option<(Timestamp, E)> {
        if self.queue.peek()?.0.due > horizon {
            return None;
        }
        let Reverse(next) = self.queue.pop()?;
        self.now = next.due;
        Some((next.due, next.event))
    }

    /// Moves the clock forward without executing anything. Never moves it
    /// backwards.
    pub fn advance_to(&mut self, t: Timestamp) {
        self.now = self.now.max(t);
    }

    /// Executes every event due at or before `end`, then sets the clock to
    /// `end`. Handlers may schedule follow-up events; those within the
    /// horizon run in the same call. Returns the number executed.
    pub fn run_until<F>(&mut self, end: Timestamp, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Timestamp, E),
    {
        let mut executed = 0;
        while let Some((due, event)) = self.pop_due(end) {
            handler(self, due, event);
            executed += 1;
        }
        self.advance_to(end);
        executed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_bytes_cost_only_overhead() {
        let net = NetworkModel::new(1000, Duration::from_millis(10)).unwrap();
        assert_eq!(net.transfer_time(0), Duration::from_millis(10));
    }

    #[test]
    fn transfer_time_arithmetic() {
        // 0.01 s + 500 B / 1000 B/s = 0.51 s
        let net = NetworkModel::new(1000, Duration::from_millis(10)).unwrap();
        assert_eq!(net.transfer_time(500), Duration::from_millis(510));
    }

    #[test]
    fn default_network_rounds_up() {
        let net = NetworkModel::default();
        // 1 B at 25 kB/s is 0.04 ms on the wire, billed as 1 ms.
        assert_eq!(net.transfer_time(1), Duration::from_millis(6));
        assert_eq!(net.transfer_time(1000), Duration::from_millis(45));
    }

    #[test]
    fn zero_bandwidth_rejected() {
        assert_eq!(NetworkModel::new(0, Duration::ZERO), Err(SimNetError::ZeroBandwidth));
    }

    proptest! {
        #[test]
        fn transfer_time_is_monotone_with_slope_one_over_bandwidth(
            bw in 1u64..1_000_000, overhead in 0u64..1000, a in 0u64..10_000_000, b in 0u64..10_000_000,
        ) {
            let net = NetworkModel::new(bw, Duration::from_millis(overhead)).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(net.transfer_time(lo) <= net.transfer_time(hi));
            // Whole multiples of the bandwidth land exactly on the affine line.
            let k = lo % 1000;
            prop_assert_eq!(net.transfer_time(k * bw), Duration::from_millis(overhead + k * 1000));
        }
    }

    #[test]
    fn ties_run_in_enqueue_order() {
        let mut clock = SimClock::new();
        clock.schedule(Timestamp::from_secs(1), "first").unwrap();
        clock.schedule(Timestamp::from_secs(1), "second").unwrap();
        let mut seen = Vec::new();
        clock.run_until(Timestamp::from_secs(2), |_, _, e| seen.push(e));
        assert_eq!(seen, vec!["first", "second"]);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut clock: SimClock<()> = SimClock::new();
        assert_eq!(clock.run_until(Timestamp::from_secs(5), |_, _, _| {}), 0);
        assert_eq!(clock.now(), Timestamp::from_secs(5));
    }

    #[test]
    fn follow_up_events_within_horizon_execute() {
        let mut clock = SimClock::new();
        clock.schedule(Timestamp::from_secs(1), 0u32).unwrap();
        let count = clock.run_until(Timestamp::from_secs(10), |c, now, gen| {
            if gen == 0 {
                c.schedule(now + Duration::from_secs(2), 1).unwrap();
            }
        });
        assert_eq!(count, 2);
    }

    #[test]
    fn scheduling_in_past_rejected() {
        let mut clock: SimClock<()> = SimClock::new();
        clock.advance_to(Timestamp::from_secs(3));
        assert_eq!(
            clock.schedule(Timestamp::from_secs(2), ()),
            Err(SimNetError::SchedulingInPast { due: Timestamp::from_secs(2), now: Timestamp::from_secs(3) })
        );
        clock.advance_to(Timestamp::from_secs(1));
        assert_eq!(clock.now(), Timestamp::from_secs(3));
    }

    proptest! {
        #[test]
        fn dequeue_order_is_total_and_monotone(dues in proptest::collection::vec(0u64..50, 0..60)) {
            let mut clock = SimClock::new();
            for (i, d) in dues.iter().enumerate() {
                clock.schedule(Timestamp::from_millis(*d), i).unwrap();
            }
            let mut seen = Vec::new();
            clock.run_until(Timestamp::from_millis(100), |c, due, i| {
                assert_eq!(c.now(), due);
                seen.push((due, i));
            });
            let mut expected: Vec<_> = dues.iter().enumerate().map(|(i, d)| (Timestamp::from_millis(*d), i)).collect();
            expected.sort();
            prop_assert_eq!(seen, expected);
        }
    }
}
