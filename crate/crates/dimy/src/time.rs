//! Simulation time. The protocol never reads the host clock; every component
//! takes explicit `Minute`/`Timestamp` values anchored to a calendar epoch.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: u64 = 1_440;
pub const SECONDS_PER_DAY: u64 = 86_400;

/// Simulated wall time in whole minutes since the scenario epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Minute(pub u64);

impl Minute {
    pub fn day(self) -> u64 {
        self.0 / MINUTES_PER_DAY
    }

    pub fn timestamp(self) -> Timestamp {
        Timestamp(self.0 * 60)
    }

    pub fn saturating_sub(self, minutes: u64) -> Minute {
        Minute(self.0.saturating_sub(minutes))
    }
}

/// Second-resolution simulated time, used by the ledger (token validity is
/// checked to the second).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn day(self) -> u64 {
        self.0 / SECONDS_PER_DAY
    }

    pub fn start_of_day(day: u64) -> Timestamp {
        Timestamp(day * SECONDS_PER_DAY)
    }
}

/// Calendar date of simulated day `day` when day 0 falls on `epoch`.
pub fn date_for_day(epoch: NaiveDate, day: u64) -> NaiveDate {
    epoch + chrono::Days::new(day)
}

/// Inverse of [`date_for_day`]; `None` when `date` precedes the epoch.
pub fn day_for_date(epoch: NaiveDate, date: NaiveDate) -> Option<u64> {
    let delta = date.signed_duration_since(epoch).num_days();
    u64::try_from(delta).ok()
}
