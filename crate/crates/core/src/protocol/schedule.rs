use crate::error::{Error, Result};

use super::message::MessageKind;

/// How often compressed weights ride along with the codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    Every(u32),
    Never,
}

impl Period {
    /// `round(1/f)` for f > 0, never for f = 0.
    pub fn from_frequency(key: &str, f: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::config(key, format!("{f} is outside [0, 1]")));
        }
        if f == 0.0 {
            return Ok(Period::Never);
        }
        Ok(Period::Every((1.0 / f).round() as u32))
    }

    pub fn divides(self, round: u32) -> bool {
        match self {
            Period::Every(p) => round.is_multiple_of(p),
            Period::Never => false,
        }
    }

    /// Effective calibration frequency, 1/period.
    pub fn frequency(self) -> f64 {
        match self {
            Period::Every(p) => 1.0 / p as f64,
            Period::Never => 0.0,
        }
    }
}

/// Transmission schedule. Rounds are 1-based; every round up to and
/// including `r_cb` is a calibration round in both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub down: Period,
    pub up: Period,
    pub r_cb: u32,
}

impl Schedule {
    pub fn from_frequencies(f1: f64, f2: f64, r_cb: u32) -> Result<Self> {
        Ok(Schedule {
            down: Period::from_frequency("f1", f1)?,
            up: Period::from_frequency("f2", f2)?,
            r_cb,
        })
    }

    pub fn from_periods(down: Period, up: Period, r_cb: u32) -> Result<Self> {
        for (key, p) in [("period1", down), ("period2", up)] {
            if p == Period::Every(0) {
                return Err(Error::config(key, "period must be positive"));
            }
        }
        Ok(Schedule { down, up, r_cb })
    }

    /// Calibration in both directions every round: weight-clustered FedAvg.
    pub fn every_round() -> Self {
        Schedule {
            down: Period::Every(1),
            up: Period::Every(1),
            r_cb: 0,
        }
    }

    pub fn downlink_kind(&self, round: u32) -> MessageKind {
        kind_for(round, self.r_cb, self.down)
    }

    pub fn uplink_kind(&self, round: u32) -> MessageKind {
        kind_for(round, self.r_cb, self.up)
    }
}

fn kind_for(round: u32, r_cb: u32, period: Period) -> MessageKind {
    debug_assert!(round >= 1, "rounds are 1-based");
    if round <= r_cb || period.divides(round) {
        MessageKind::CodebookPlusWeights
    } else {
        MessageKind::CodebookOnly
    }
}

pub fn downlink_kind(round: u32, s: &Schedule) -> MessageKind {
    s.downlink_kind(round)
}

pub fn uplink_kind(round: u32, s: &Schedule) -> MessageKind {
    s.uplink_kind(round)
}
