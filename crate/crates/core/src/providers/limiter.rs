//! Caps concurrent in-flight requests per provider endpoint.
//!
//! Worker threads outnumber what a single model server will happily accept,
//! so every HTTP call passes through this counting gate. A plain mutex plus
//! condvar is enough: callers block until a slot frees up, and the guard
//! releases its slot on drop even if the request panics.

use std::sync::{Condvar, Mutex};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Counting gate over concurrent requests.
pub struct RequestLimiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl RequestLimiter {
    /// `max` of zero is treated as one; a limiter that admits nothing would
    /// deadlock every caller.
    pub fn new(max: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.max
    }

    /// Blocks until a slot is free, then holds it for the guard's lifetime.
    pub fn acquire(&self) -> LimiterGuard<'_> {
        let mut count = self
            .in_flight
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        while *count >= self.max {
            count = self
                .freed
                .wait(count)
                .unwrap_or_else(|poisoned| poisoned.into_inner());
        }
        *count += 1;
        LimiterGuard { limiter: self }
    }
}

impl Default for RequestLimiter {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_IN_FLIGHT)
    }
}

pub struct LimiterGuard<'a> {
    limiter: &'a RequestLimiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut count = self
            .limiter
            .in_flight
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner());
        *count = count.saturating_sub(1);
        self.limiter.freed.notify_one();
    }
}
