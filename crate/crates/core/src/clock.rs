//! Time sources. Everything that waits or stamps goes through [`Clock`] so
//! scheduler runs and backoff can be replayed under a simulated clock.

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Microseconds since the Unix epoch, UTC.
    fn now_us(&self) -> i64;

    /// Block (or pretend to) until `t_us`. Never moves time backwards.
    fn sleep_until(&self, t_us: i64);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_us(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as i64)
            .unwrap_or(0)
    }

    fn sleep_until(&self, t_us: i64) {
        let now = self.now_us();
        if t_us > now {
            std::thread::sleep(Duration::from_micros((t_us - now) as u64));
        }
    }
}

/// Manually driven clock. `sleep_until` jumps straight to the target instant.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicI64,
}

impl SimClock {
    pub fn new(start_us: i64) -> Self {
        Self {
            now: AtomicI64::new(start_us),
        }
    }

    pub fn set(&self, t_us: i64) {
        self.now.store(t_us, Ordering::SeqCst);
    }

    pub fn advance(&self, delta_us: i64) {
        self.now.fetch_add(delta_us, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_us(&self) -> i64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, t_us: i64) {
        self.now.fetch_max(t_us, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_never_goes_back() {
        let c = SimClock::new(100);
        c.sleep_until(50);
        assert_eq!(c.now_us(), 100);
        c.sleep_until(250);
        assert_eq!(c.now_us(), 250);
        c.advance(5);
        assert_eq!(c.now_us(), 255);
    }
}
