//! Time sources. All store and agent timing goes through [`Clock`] so tests
//! can compress minutes of protocol time into milliseconds.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Milliseconds since an arbitrary epoch.
pub type Millis = u64;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> Millis;
    fn sleep_ms(&self, ms: Millis);
}

/// Wall-clock time since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> Millis {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as Millis)
    }

    fn sleep_ms(&self, ms: Millis) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Virtual time running `factor` times faster than real time. With a factor
/// of 100 a 60 s lease lasts 0.6 real seconds.
#[derive(Debug)]
pub struct ScaledClock {
    origin: Instant,
    factor: f64,
}

impl ScaledClock {
    pub fn new(factor: f64) -> Self {
        assert!(factor > 0.0, "clock factor must be positive");
        Self {
            origin: Instant::now(),
            factor,
        }
    }
}

impl Clock for ScaledClock {
    fn now_ms(&self) -> Millis {
        (self.origin.elapsed().as_secs_f64() * 1000.0 * self.factor) as Millis
    }

    fn sleep_ms(&self, ms: Millis) {
        std::thread::sleep(Duration::from_secs_f64(ms as f64 / 1000.0 / self.factor));
    }
}

/// Time that only moves when told to. `sleep_ms` advances it, which suits
/// single-threaded tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start: Millis) -> Self {
        Self {
            now: AtomicU64::new(start),
        }
    }

    pub fn advance(&self, ms: Millis) {
        self.now.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: Millis) {
        self.now.fetch_max(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> Millis {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_ms(&self, ms: Millis) {
        self.advance(ms);
    }
}
