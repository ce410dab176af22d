//! Simulated time with millisecond resolution.
//!
//! Simulated time has no wall-clock or timezone meaning. On the wire it is
//! rendered as an ISO-8601 instant offset from the Unix epoch so that sitemap
//! tooling can read it.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

const WIRE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

/// A point in simulated time, in whole milliseconds since the simulation
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: u64) -> Self {
        Self(ms)
    }

    pub const fn from_secs(secs: u64) -> Self {
        Self(secs * 1000)
    }

    /// Rounds to the nearest millisecond. Returns `None` for negative or
    /// non-finite input.
    pub fn from_secs_f64(secs: f64) -> Option<Self> {
        if !secs.is_finite() || secs < 0.0 {
            return None;
        }
        let ms = (secs * 1000.0).round();
        if ms > u64::MAX as f64 {
            return None;
        }
        Some(Self(ms as u64))
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }

    /// ISO-8601 rendering used in synchronization documents, e.g.
    /// `1970-01-01T00:00:12.345Z`.
    pub fn to_wire(self) -> String {
        let ms = i64::try_from(self.0).expect("simulated time fits in i64 milliseconds");
        DateTime::from_timestamp_millis(ms).expect("simulated time within chrono range").format(WIRE_FORMAT).to_string()
    }

    /// Parses the wire rendering. Only the canonical form produced by
    /// [`Timestamp::to_wire`] is accepted.
    pub fn from_wire(text: &str) -> Option<Self> {
        let parsed = NaiveDateTime::parse_from_str(text, WIRE_FORMAT).ok()?;
        let ms = parsed.and_utc().timestamp_millis();
        let ts = Timestamp(u64::try_from(ms).ok()?);
        (ts.to_wire() == text).then_some(ts)
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + duration_millis(rhs))
    }
}

impl Sub for Timestamp {
    type Output = Duration;

    fn sub(self, rhs: Timestamp) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_secs(self.0))
    }
}

/// Whole milliseconds in `d`, rounding up any sub-millisecond remainder.
pub fn duration_millis(d: Duration) -> u64 {
    let ms = d.as_millis() as u64;
    if !d.subsec_nanos().is_multiple_of(1_000_000) {
        ms + 1
    } else {
        ms
    }
}

/// Renders a millisecond count as seconds with trailing zeros trimmed:
/// `100` → `0.1`, `10000` → `10`, `5` → `0.005`.
pub fn format_secs(ms: u64) -> String {
    let whole = ms / 1000;
    let frac = ms % 1000;
    if frac == 0 {
        whole.to_string()
    } else {
        let digits = format!("{frac:03}");
        format!("{whole}.{}", digits.trim_end_matches('0'))
    }
}
