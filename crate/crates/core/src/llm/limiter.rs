//! Request rate limiting.
//!
//! A token bucket of `capacity` tokens where each spent token comes back
//! exactly one window after it was spent. Equivalently, a log of call start
//! times: a call may start only while fewer than `capacity` calls started in
//! the trailing window. This bounds the number of calls in *every* window of
//! that length, which a continuously refilled bucket does not (a full bucket
//! plus one window of refill admits almost twice the capacity).

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::clock::Clock;

#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    clock: Arc<dyn Clock>,
    starts: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        Self::new(requests_per_minute.max(1) as usize, Duration::from_secs(60), clock)
    }

    pub fn new(capacity: usize, window: Duration, clock: Arc<dyn Clock>) -> Self {
        assert!(capacity >= 1, "rate limiter capacity must be at least 1");
        Self {
            capacity,
            window,
            clock,
            starts: Mutex::new(VecDeque::new()),
        }
    }

    /// Tokens available right now.
    pub fn available(&self) -> usize {
        let mut starts = self.starts.lock().unwrap();
        self.expire(&mut starts, self.clock.now());
        self.capacity - starts.len()
    }

    /// Take a token without blocking. Returns the admission time on success.
    pub fn try_acquire(&self) -> Result<Duration, Duration> {
        let mut starts = self.starts.lock().unwrap();
        let now = self.clock.now();
        self.expire(&mut starts, now);
        if starts.len() < self.capacity {
            starts.push_back(now);
            Ok(now)
        } else {
            // Oldest start leaves the window at front + window.
            Err(*starts.front().unwrap() + self.window - now)
        }
    }

    /// Block (via the clock) until a token is available, then take it.
    /// Returns the admission time.
    pub fn acquire(&self) -> Duration {
        loop {
            match self.try_acquire() {
                Ok(at) => return at,
                Err(wait) => self.clock.sleep(wait.max(Duration::from_nanos(1))),
            }
        }
    }

    fn expire(&self, starts: &mut VecDeque<Duration>, now: Duration) {
        while let Some(first) = starts.front() {
            if now >= *first + self.window {
                starts.pop_front();
            } else {
                break;
            }
        }
    }
}
