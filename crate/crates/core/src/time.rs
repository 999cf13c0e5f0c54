//! Integer-nanosecond simulation time.
//!
//! Every timestamp and duration in the simulator is a whole number of
//! nanoseconds so that event ordering never depends on float rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

/// A timestamp or duration in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nanos(pub u64);

impl Nanos {
    pub const ZERO: Nanos = Nanos(0);
    pub const MAX: Nanos = Nanos(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        Nanos(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        Nanos(ms * 1_000_000)
    }

    /// Rounds a float number of seconds to the nearest nanosecond.
    pub fn from_secs_f64(s: f64) -> Self {
        debug_assert!(s >= 0.0 && s.is_finite());
        Nanos((s * 1e9).round() as u64)
    }

    /// Rounds a float number of microseconds to the nearest nanosecond.
    pub fn from_micros_f64(us: f64) -> Self {
        debug_assert!(us >= 0.0 && us.is_finite());
        Nanos((us * 1e3).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    /// Microseconds rounded half-up, for display and CSV output.
    pub fn display_micros(self) -> u64 {
        (self.0 + 500) / 1_000
    }

    pub fn saturating_sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Nanos {
    type Output = Nanos;
    fn add(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 + rhs.0)
    }
}

impl AddAssign for Nanos {
    fn add_assign(&mut self, rhs: Nanos) {
        self.0 += rhs.0;
    }
}

impl Sub for Nanos {
    type Output = Nanos;
    fn sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 - rhs.0)
    }
}

impl Mul<u64> for Nanos {
    type Output = Nanos;
    fn mul(self, rhs: u64) -> Nanos {
        Nanos(self.0 * rhs)
    }
}

impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_rounding() {
        assert_eq!(Nanos(266_667).display_micros(), 267);
        assert_eq!(Nanos(266_499).display_micros(), 266);
        assert_eq!(Nanos::from_micros(34).display_micros(), 34);
    }

    #[test]
    fn conversions() {
        assert_eq!(Nanos::from_secs_f64(1.0), Nanos(1_000_000_000));
        assert_eq!(Nanos::from_millis(100), Nanos(100_000_000));
        assert_eq!(Nanos::from_micros_f64(0.5), Nanos(500));
    }
}
