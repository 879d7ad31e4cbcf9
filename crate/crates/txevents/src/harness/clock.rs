use std::collections::BTreeMap;
use std::time::Duration;

/// Handle for cancelling a scheduled timer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TimerHandle(u64);

/// A manually advanced clock holding timers of payload `T`.
///
/// Timers fire in deadline order; timers sharing a deadline fire in the order
/// they were scheduled.
#[derive(Debug)]
pub struct VirtualClock<T> {
    now: Duration,
    next_seq: u64,
    queue: BTreeMap<(Duration, u64), T>,
    deadlines: BTreeMap<u64, Duration>,
}

impl<T> Default for VirtualClock<T> {
    fn default() -> Self {
        VirtualClock {
            now: Duration::ZERO,
            next_seq: 0,
            queue: BTreeMap::new(),
            deadlines: BTreeMap::new(),
        }
    }
}

impl<T> VirtualClock<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Duration {
        self.now
    }

    /// Deadlines in the past fire on the next advance.
    pub fn schedule(&mut self, deadline: Duration, payload: T) -> TimerHandle {
        self.next_seq += 1;
        self.queue.insert((deadline, self.next_seq), payload);
        self.deadlines.insert(self.next_seq, deadline);
        TimerHandle(self.next_seq)
    }

    pub fn cancel(&mut self, h: TimerHandle) -> Option<T> {
        let d = self.deadlines.remove(&h.0)?;
        self.queue.remove(&(d, h.0))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_deadline(&self) -> Option<Duration> {
        self.queue.keys().next().map(|(d, _)| *d)
    }

    /// Moves time forward by `d` and returns every timer due by then, in
    /// firing order.
    pub fn advance(&mut self, d: Duration) -> Vec<T> {
        self.advance_to(self.now + d)
    }

    /// Like [`advance`](Self::advance) with an absolute target; time never
    /// moves backwards.
    pub fn advance_to(&mut self, t: Duration) -> Vec<T> {
        self.now = self.now.max(t);
        let mut fired = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let ((_, seq), payload) = entry.remove_entry();
            self.deadlines.remove(&seq);
            fired.push(payload);
        }
        fired
    }
}
