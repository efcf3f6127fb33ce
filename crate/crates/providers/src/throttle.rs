//! Process-wide request throttle.
//!
//! Keeps the start times of recent requests and blocks until admitting one
//! more would leave at most `limit` starts inside any window. Share one
//! limiter (behind an `Arc`) between every client that calls the same
//! service.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Time source, injectable so tests can run throttled code instantly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

pub struct RateLimiter {
    limit: usize,
    window: Duration,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(limit: usize, window: Duration) -> Self {
        assert!(limit > 0, "rate limit must be positive");
        Self {
            limit,
            window,
            starts: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(requests_per_minute: usize) -> Self {
        Self::new(requests_per_minute, Duration::from_secs(60))
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Blocks until a request may start, then records it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().unwrap_or_else(|e| e.into_inner());
                let now = clock.now();
                while starts
                    .front()
                    .is_some_and(|&t| now.saturating_duration_since(t) >= self.window)
                {
                    starts.pop_front();
                }
                if starts.len() < self.limit {
                    starts.push_back(now);
                    return;
                }
                let oldest = starts[0];
                self.window.saturating_sub(now.saturating_duration_since(oldest))
            };
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::sync::Arc;

    /// Clock whose `sleep` advances virtual time instead of blocking.
    pub(crate) struct ManualClock {
        base: Instant,
        offset: Mutex<Duration>,
    }

    impl ManualClock {
        pub(crate) fn new() -> Self {
            Self {
                base: Instant::now(),
                offset: Mutex::new(Duration::ZERO),
            }
        }

        pub(crate) fn elapsed(&self) -> Duration {
            *self.offset.lock().unwrap()
        }
    }

    impl Clock for ManualClock {
        fn now(&self) -> Instant {
            self.base + *self.offset.lock().unwrap()
        }

        fn sleep(&self, d: Duration) {
            *self.offset.lock().unwrap() += d;
        }
    }

    #[test]
    fn no_window_exceeds_the_limit() {
        let clock = ManualClock::new();
        let limiter = RateLimiter::per_minute(5);
        let mut starts = Vec::new();
        for _ in 0..23 {
            limiter.acquire(&clock);
            starts.push(clock.elapsed());
            clock.sleep(Duration::from_secs(2));
        }
        for (i, &s) in starts.iter().enumerate() {
            let in_window = starts[i..].iter().filter(|&&t| t - s < Duration::from_secs(60)).count();
            assert!(in_window <= 5, "window starting at {s:?} holds {in_window}");
        }
        // Five requests go through immediately, then the sixth waits for the
        // first to leave the window.
        assert_eq!(starts[4], Duration::from_secs(8));
        assert_eq!(starts[5], Duration::from_secs(60));
    }

    #[test]
    fn shared_between_threads() {
        let limiter = Arc::new(RateLimiter::new(1000, Duration::from_secs(60)));
        let clock = Arc::new(SystemClock);
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (l, c) = (limiter.clone(), clock.clone());
                std::thread::spawn(move || (0..50).for_each(|_| l.acquire(c.as_ref())))
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        assert_eq!(limiter.starts.lock().unwrap().len(), 200);
    }
}
