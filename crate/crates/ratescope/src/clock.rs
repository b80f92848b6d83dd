//! Platform time reference and clock selection.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ratescope_core::timebase::{TimeSource, VirtualClock};

use crate::error::{Error, Result};

/// Environment variable selecting the time reference: `platform` or `virtual`.
pub const TIMEREF_ENV: &str = "RATE_SCOPE_TIMEREF";

/// Step of the virtual clock selected through the environment.
pub const VIRTUAL_STEP_NS: u64 = 50;

pub type SharedClock = Arc<dyn TimeSource + Send + Sync>;

/// Monotonic nanoseconds since construction, backed by `Instant`.
#[derive(Debug, Clone, Copy)]
pub struct PlatformClock {
    origin: Instant,
}

impl PlatformClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for PlatformClock {
    fn default() -> Self {
        Self::new()
    }
}

impl TimeSource for PlatformClock {
    #[inline]
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn sleep_until(&self, deadline_ns: u64) {
        let now = self.now_ns();
        if deadline_ns > now {
            std::thread::sleep(Duration::from_nanos(deadline_ns - now));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    Platform,
    Virtual,
}

impl ClockKind {
    pub fn from_env() -> Result<Self> {
        match std::env::var(TIMEREF_ENV) {
            Err(_) => Ok(Self::Platform),
            Ok(v) => match v.trim().to_ascii_lowercase().as_str() {
                "" | "platform" => Ok(Self::Platform),
                "virtual" => Ok(Self::Virtual),
                other => Err(Error::Config(format!(
                    "{TIMEREF_ENV} must be 'platform' or 'virtual', got '{other}'"
                ))),
            },
        }
    }

    pub fn build(self) -> SharedClock {
        match self {
            Self::Platform => Arc::new(PlatformClock::new()),
            Self::Virtual => Arc::new(VirtualClock::new(0, VIRTUAL_STEP_NS)),
        }
    }
}

/// Spins until `deadline_ns`. Used to simulate work without yielding the CPU.
#[inline]
pub fn busy_wait_until<C: TimeSource + ?Sized>(clock: &C, deadline_ns: u64) {
    while clock.now_ns() < deadline_ns {
        std::hint::spin_loop();
    }
}

/// Asks the kernel for the tightest timer slack on the calling thread so that
/// monitor wake-ups land close to their deadline.
pub fn tighten_timer_slack() {
    #[cfg(target_os = "linux")]
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn platform_clock_is_monotonic() {
        let c = PlatformClock::new();
        let mut prev = c.now_ns();
        for _ in 0..10_000 {
            let t = c.now_ns();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn sleep_reaches_deadline() {
        let c = PlatformClock::new();
        let target = c.now_ns() + 200_000;
        c.sleep_until(target);
        assert!(c.now_ns() >= target);
        busy_wait_until(&c, target + 10_000);
        assert!(c.now_ns() >= target + 10_000);
    }
}
