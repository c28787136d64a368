// SPDX-License-Identifier: Apache-2.0

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{SimError, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Single-threaded event queue. Events at equal timestamps pop in the
/// order they were scheduled.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Entry<E>>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Entry { at, seq, event }));
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay_ms: u64, event: E) -> EventHandle {
        let at = self.now + delay_ms;
        self.schedule(at, event)
            .expect("relative schedule is never in the past")
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(entry) = self.queue.pop()?;
        debug_assert!(entry.at >= self.now);
        self.now = entry.at;
        Some((entry.at, entry.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.at)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Moves the clock forward with nothing pending in between.
    pub fn advance_to(&mut self, at: SimTime) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        if let Some(next) = self.peek_time() {
            if next < at {
                return Err(SimError::ScheduleInPast { at: next, now: at });
            }
        }
        self.now = at;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_at_timestamp() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(5), "e").unwrap();
        assert_eq!(s.pop(), Some((SimTime::from_ms(5), "e")));
        assert_eq!(s.now(), SimTime::from_ms(5));
        assert_eq!(s.pop(), None);
    }

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(5), 1).unwrap();
        s.schedule(SimTime::from_ms(3), 0).unwrap();
        s.schedule(SimTime::from_ms(5), 2).unwrap();
        s.schedule(SimTime::from_ms(5), 3).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| s.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_the_past() {
        assert_eq!(SimTime::try_from_ms(-1), Err(SimError::NegativeTime(-1)));
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(10), ()).unwrap();
        s.pop();
        assert!(matches!(
            s.schedule(SimTime::from_ms(9), ()),
            Err(SimError::ScheduleInPast { .. })
        ));
        assert!(s.schedule(SimTime::from_ms(10), ()).is_ok());
    }

    #[test]
    fn advance_cannot_skip_pending_events() {
        let mut s = Scheduler::new();
        s.schedule(SimTime::from_ms(10), ()).unwrap();
        assert!(s.advance_to(SimTime::from_ms(20)).is_err());
        s.advance_to(SimTime::from_ms(10)).unwrap();
    }
}
