//! Fixed-point simulated time.
//!
//! The clock counts integer ticks; one abstract time unit is
//! [`TICKS_PER_UNIT`] ticks. Integer arithmetic keeps replays exact.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const TICKS_PER_UNIT: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    /// Converts a duration expressed in abstract units, rounding to the
    /// nearest tick.
    pub fn from_units(units: f64) -> Result<Self> {
        if !units.is_finite() || units < 0.0 {
            return Err(Error::Config(format!(
                "simulated time must be finite and non-negative, got {units}"
            )));
        }
        let ticks = (units * TICKS_PER_UNIT as f64).round();
        if ticks > u64::MAX as f64 {
            return Err(Error::Config(format!("simulated time {units} overflows the clock")));
        }
        Ok(SimTime(ticks as u64))
    }

    /// Like [`SimTime::from_units`] but clamps negative or non-finite draws to zero.
    pub(crate) fn from_units_clamped(units: f64) -> Self {
        if units.is_nan() || units <= 0.0 {
            return SimTime::ZERO;
        }
        let ticks = (units * TICKS_PER_UNIT as f64).round();
        if ticks >= u64::MAX as f64 {
            SimTime(u64::MAX)
        } else {
            SimTime(ticks as u64)
        }
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn scaled(self, factor: u64) -> SimTime {
        SimTime(self.0.saturating_mul(factor))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / TICKS_PER_UNIT, self.0 % TICKS_PER_UNIT)
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_units())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let units = f64::deserialize(deserializer)?;
        SimTime::from_units(units).map_err(serde::de::Error::custom)
    }
}
