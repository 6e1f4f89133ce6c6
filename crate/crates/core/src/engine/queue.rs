use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::querygraph::Tuple;

/// Default per-subscriber buffer, in tuples.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

struct State {
    buf: VecDeque<Tuple>,
    closed: bool,
}

/// Bounded single-consumer queue. `send` blocks while full; `close`
/// discards anything still buffered so a revoked subscriber sees no more
/// data, only end-of-stream.
pub(crate) struct SubscriberQueue {
    state: Mutex<State>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) struct Closed;

impl SubscriberQueue {
    pub fn new(capacity: usize) -> SubscriberQueue {
        SubscriberQueue {
            state: Mutex::new(State {
                buf: VecDeque::new(),
                closed: false,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn send(&self, t: Tuple) -> Result<(), Closed> {
        let mut s = self.lock();
        while !s.closed && s.buf.len() >= self.capacity {
            s = self.not_full.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        if s.closed {
            return Err(Closed);
        }
        s.buf.push_back(t);
        self.not_empty.notify_one();
        Ok(())
    }

    pub fn close(&self) {
        let mut s = self.lock();
        s.closed = true;
        s.buf.clear();
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Blocks until a tuple arrives or the queue closes (`None`).
    pub fn recv(&self) -> Option<Tuple> {
        let mut s = self.lock();
        loop {
            if let Some(t) = s.buf.pop_front() {
                self.not_full.notify_one();
                return Some(t);
            }
            if s.closed {
                return None;
            }
            s = self.not_empty.wait(s).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// `Ok(None)` on end-of-stream, `Err(())` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Tuple>, ()> {
        let deadline = Instant::now() + timeout;
        let mut s = self.lock();
        loop {
            if let Some(t) = s.buf.pop_front() {
                self.not_full.notify_one();
                return Ok(Some(t));
            }
            if s.closed {
                return Ok(None);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(());
            }
            s = self
                .not_empty
                .wait_timeout(s, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn len(&self) -> usize {
        self.lock().buf.len()
    }
}
