use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch. Serialized as ISO-8601 UTC with
/// millisecond precision, e.g. `2026-10-17T09:30:00.250Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Self(ms)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    /// `self + seconds`, rounded to the nearest millisecond.
    pub fn add_secs(self, seconds: f64) -> Self {
        Self(self.0 + (seconds * 1000.0).round() as i64)
    }

    /// Seconds elapsed from `earlier` to `self`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }

    pub fn to_iso(self) -> String {
        DateTime::<Utc>::from_timestamp_millis(self.0)
            .expect("timestamp in chrono range")
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse_iso(s: &str) -> Result<Self, chrono::ParseError> {
        let dt = DateTime::parse_from_rfc3339(s)?;
        Ok(Self(dt.timestamp_millis()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_iso())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse_iso(&s).map_err(serde::de::Error::custom)
    }
}

/// Source of "now" for the engine. The engine never reads wall time
/// directly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp(d.as_millis() as i64)
    }
}

/// A clock that only moves when told to. Clones share the same time.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(Arc::new(AtomicI64::new(start.0)))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t.0, Ordering::SeqCst);
    }

    pub fn advance_secs(&self, seconds: f64) {
        self.0.fetch_add((seconds * 1000.0).round() as i64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// Real time sped up by a constant factor from a fixed origin. Used to run
/// simulated crowds against the live service faster than wall time.
#[derive(Debug, Clone)]
pub struct ScaledClock {
    origin_real: Instant,
    origin_virtual: Timestamp,
    speed: f64,
}

impl ScaledClock {
    pub fn new(speed: f64) -> Self {
        Self {
            origin_real: Instant::now(),
            origin_virtual: SystemClock.now(),
            speed,
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Real duration corresponding to `virtual_secs` of clock time.
    pub fn real_duration(&self, virtual_secs: f64) -> std::time::Duration {
        std::time::Duration::from_secs_f64((virtual_secs / self.speed).max(0.0))
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> Timestamp {
        let elapsed = self.origin_real.elapsed().as_secs_f64() * self.speed;
        self.origin_virtual.add_secs(elapsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip() {
        let t = Timestamp::from_millis(1_790_000_000_123);
        let s = t.to_iso();
        assert!(s.ends_with(".123Z"), "{s}");
        assert_eq!(Timestamp::parse_iso(&s).unwrap(), t);
        assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{s}\""));
    }

    #[test]
    fn arithmetic() {
        let t = Timestamp::from_millis(1000);
        assert_eq!(t.add_secs(20.0).millis(), 21_000);
        assert_eq!(t.add_secs(1.5).secs_since(t), 1.5);
    }

    #[test]
    fn manual_clock_is_shared() {
        let c = ManualClock::new(Timestamp::from_millis(0));
        let c2 = c.clone();
        c.advance_secs(2.5);
        assert_eq!(c2.now().millis(), 2500);
    }

    #[test]
    fn scaled_clock_runs_fast() {
        let c = ScaledClock::new(1000.0);
        let a = c.now();
        std::thread::sleep(std::time::Duration::from_millis(5));
        assert!(c.now().secs_since(a) >= 4.0);
    }
}
