use std::time::{Duration, Instant};

use crate::error::{EmasError, Result};
use crate::model::AgentId;

/// Waiting room of an arena: a cyclic barrier that releases a group when it
/// fills up, or when the first waiter has waited longer than `timeout`.
#[derive(Debug, Clone)]
pub struct ArenaBarrier<T> {
    capacity: usize,
    timeout: Duration,
    room: Vec<(AgentId, T)>,
    first_arrival: Option<Instant>,
}

impl<T> ArenaBarrier<T> {
    pub fn new(capacity: usize, timeout: Duration) -> Self {
        assert!(capacity >= 1, "arena capacity must be at least 1");
        Self { capacity, timeout, room: Vec::with_capacity(capacity), first_arrival: None }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.room.len()
    }

    pub fn is_empty(&self) -> bool {
        self.room.is_empty()
    }

    /// Adds a waiter; returns the released group once the room is full.
    pub fn join(&mut self, id: AgentId, entry: T, now: Instant) -> Result<Option<Vec<(AgentId, T)>>> {
        if self.room.iter().any(|(waiting, _)| *waiting == id) {
            return Err(EmasError::Protocol(format!("agent {id} joined an arena it is already waiting in")));
        }
        if self.room.is_empty() {
            self.first_arrival = Some(now);
        }
        self.room.push((id, entry));
        Ok((self.room.len() >= self.capacity).then(|| self.flush()))
    }

    /// Releases a partial group if the first waiter has timed out.
    pub fn poll_timeout(&mut self, now: Instant) -> Option<Vec<(AgentId, T)>> {
        match self.first_arrival {
            Some(t) if !self.room.is_empty() && now.duration_since(t) >= self.timeout => Some(self.flush()),
            _ => None,
        }
    }

    /// Empties the room unconditionally.
    pub fn flush(&mut self) -> Vec<(AgentId, T)> {
        self.first_arrival = None;
        std::mem::take(&mut self.room)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: Duration = Duration::from_millis(100);

    #[test]
    fn two_joins_fill_capacity_two() {
        let now = Instant::now();
        let mut b = ArenaBarrier::new(2, T);
        assert!(b.join(AgentId(1), (), now).unwrap().is_none());
        let group = b.join(AgentId(2), (), now).unwrap().unwrap();
        assert_eq!(group.iter().map(|g| g.0).collect::<Vec<_>>(), vec![AgentId(1), AgentId(2)]);
        assert!(b.is_empty());
    }

    #[test]
    fn lone_waiter_released_by_timeout() {
        let now = Instant::now();
        let mut b = ArenaBarrier::new(2, T);
        b.join(AgentId(1), (), now).unwrap();
        assert!(b.poll_timeout(now + Duration::from_millis(99)).is_none());
        let group = b.poll_timeout(now + T).unwrap();
        assert_eq!(group.len(), 1);
        assert!(b.poll_timeout(now + 3 * T).is_none());
    }

    #[test]
    fn third_rapid_join_waits() {
        let now = Instant::now();
        let mut b = ArenaBarrier::new(2, T);
        b.join(AgentId(1), (), now).unwrap();
        let first = b.join(AgentId(2), (), now).unwrap().unwrap();
        assert_eq!(first.len(), 2);
        assert!(b.join(AgentId(3), (), now).unwrap().is_none());
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn double_join_is_protocol_error() {
        let now = Instant::now();
        let mut b = ArenaBarrier::new(3, T);
        b.join(AgentId(1), (), now).unwrap();
        assert!(matches!(b.join(AgentId(1), (), now), Err(EmasError::Protocol(_))));
    }

    #[test]
    fn timeout_counts_from_first_waiter_of_each_round() {
        let t0 = Instant::now();
        let mut b = ArenaBarrier::new(3, T);
        b.join(AgentId(1), (), t0).unwrap();
        b.poll_timeout(t0 + T).unwrap();
        let t1 = t0 + 5 * T;
        b.join(AgentId(2), (), t1).unwrap();
        assert!(b.poll_timeout(t1 + T / 2).is_none());
        assert!(b.poll_timeout(t1 + T).is_some());
    }
}
