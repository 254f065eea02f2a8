use std::time::{Duration, Instant};

/// Time source for the gateway loop, in milliseconds since the run started.
pub trait Clock {
    fn now_ms(&self) -> u64;
    /// Block (or jump, in simulated time) until `t_ms`. Never goes backwards.
    fn wait_until(&mut self, t_ms: u64);
    fn sleep_ms(&mut self, ms: u64) {
        let t = self.now_ms() + ms;
        self.wait_until(t);
    }
    fn is_simulated(&self) -> bool;
}

#[derive(Debug, Clone, Default)]
pub struct SimClock {
    now: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now
    }

    fn wait_until(&mut self, t_ms: u64) {
        self.now = self.now.max(t_ms);
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn wait_until(&mut self, t_ms: u64) {
        let now = self.now_ms();
        if t_ms > now {
            std::thread::sleep(Duration::from_millis(t_ms - now));
        }
    }

    fn is_simulated(&self) -> bool {
        false
    }
}
