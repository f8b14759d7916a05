use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Token bucket with a burst of one: dispatches are spaced at least `interval` apart.
///
/// The lock is held while waiting, so callers are served one at a time.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn unlimited() -> Self {
        Self {
            interval: None,
            next_slot: Mutex::new(None),
        }
    }

    pub fn per_minute(requests: u32) -> Self {
        assert!(requests > 0, "requests per minute must be positive");
        Self {
            interval: Some(Duration::from_secs(60) / requests),
            next_slot: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Option<Duration> {
        self.interval
    }

    pub fn acquire(&self, sleep: &dyn Fn(Duration)) {
        let Some(interval) = self.interval else {
            return;
        };
        let mut next = self.next_slot.lock();
        let now = Instant::now();
        let start = match *next {
            Some(slot) if slot > now => {
                sleep(slot - now);
                slot
            }
            _ => now,
        };
        *next = Some(start + interval);
    }
}
