use tokio::time::Instant;

/// Wall-clock source for timestamps. Elapsed-time measurement always goes
/// through tokio's clock so paused-time tests see virtual durations.
pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        chrono::Utc::now().timestamp_millis()
    }
}

/// A fixed epoch origin advanced by tokio's (possibly paused) clock.
#[derive(Debug, Clone, Copy)]
pub struct VirtualClock {
    pub origin_ms: i64,
    start: Instant,
}

impl VirtualClock {
    pub fn new(origin_ms: i64) -> Self {
        Self {
            origin_ms,
            start: Instant::now(),
        }
    }

    /// Midnight UTC on the given day, plus `hour` hours.
    pub fn at(date: chrono::NaiveDate, hour: u32) -> Self {
        let ms = date
            .and_hms_opt(hour, 0, 0)
            .map(|d| d.and_utc().timestamp_millis())
            .unwrap_or_default();
        Self::new(ms)
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> i64 {
        self.origin_ms + self.start.elapsed().as_millis() as i64
    }
}
