use std::collections::VecDeque;
use std::sync::Mutex;

use crate::protocol::ClientFrame;

pub const QUEUE_CAPACITY: usize = 256;

/// Client events waiting for the next tick boundary. When full, the oldest
/// event is dropped and counted.
#[derive(Debug)]
pub struct EventQueue {
    capacity: usize,
    inner: Mutex<(VecDeque<ClientFrame>, u64)>,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::with_capacity(QUEUE_CAPACITY)
    }
}

impl EventQueue {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            inner: Mutex::new((VecDeque::with_capacity(capacity), 0)),
        }
    }

    pub fn push(&self, frame: ClientFrame) {
        let mut g = self.inner.lock().expect("queue lock");
        if g.0.len() == self.capacity {
            g.0.pop_front();
            g.1 += 1;
        }
        g.0.push_back(frame);
    }

    /// Everything queued, in arrival order, plus the number dropped since the
    /// last drain.
    pub fn drain(&self) -> (Vec<ClientFrame>, u64) {
        let mut g = self.inner.lock().expect("queue lock");
        let dropped = std::mem::take(&mut g.1);
        (g.0.drain(..).collect(), dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Command;

    fn frame(t: u64) -> ClientFrame {
        ClientFrame {
            last_tick: t,
            command: Command::Stop,
        }
    }

    #[test]
    fn overflow_drops_oldest_and_counts() {
        let q = EventQueue::default();
        for t in 0..300 {
            q.push(frame(t));
        }
        let (events, dropped) = q.drain();
        assert_eq!(dropped, 44);
        assert_eq!(events.len(), QUEUE_CAPACITY);
        assert_eq!(events[0].last_tick, 44);
        assert_eq!(events.last().unwrap().last_tick, 299);
        assert_eq!(q.drain(), (vec![], 0));
    }

    #[test]
    fn drain_preserves_arrival_order() {
        let q = EventQueue::with_capacity(4);
        for t in [3, 1, 2] {
            q.push(frame(t));
        }
        let ticks: Vec<u64> = q.drain().0.iter().map(|f| f.last_tick).collect();
        assert_eq!(ticks, vec![3, 1, 2]);
    }
}
