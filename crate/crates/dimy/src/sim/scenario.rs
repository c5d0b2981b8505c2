//! Scenario files: the JSON schema driving a simulation run.

use crate::backend::{LedgerConfig, MatchPolicy};
use crate::crypto::GroupMode;
use crate::time::MINUTES_PER_DAY;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario needs at least one device")]
    NoDevices,
    #[error("horizon_minutes must be positive")]
    EmptyHorizon,
    #[error("loss_probability must lie in [0, 1]")]
    BadLoss,
    #[error("contact #{0}: device index out of range")]
    ContactDeviceRange(usize),
    #[error("contact #{0}: interval is empty or outside the horizon")]
    ContactInterval(usize),
    #[error("contact #{0}: a device cannot contact itself")]
    SelfContact(usize),
    #[error("event references device index out of range")]
    EventDeviceRange,
    #[error("event minute outside the horizon")]
    EventOutsideHorizon,
}

/// A bidirectional proximity interval `[start_minute, end_minute)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactInterval {
    pub a: usize,
    pub b: usize,
    pub start_minute: u64,
    pub end_minute: u64,
}

impl ContactInterval {
    pub fn duration(&self) -> u64 {
        self.end_minute.saturating_sub(self.start_minute)
    }

    pub fn active_at(&self, minute: u64) -> bool {
        (self.start_minute..self.end_minute).contains(&minute)
    }

    pub fn involves(&self, device: usize) -> Option<usize> {
        if self.a == device {
            Some(self.b)
        } else if self.b == device {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Diagnosis on `day`; the token/upload flow runs at `minute_of_day`
/// (default 23:59, after the day's contacts).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisEvent {
    pub device: usize,
    pub day: u64,
    #[serde(default)]
    pub minute_of_day: Option<u64>,
}

impl DiagnosisEvent {
    pub fn minute(&self) -> u64 {
        self.day * MINUTES_PER_DAY + self.minute_of_day.unwrap_or(MINUTES_PER_DAY - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub device: usize,
    pub day: u64,
    #[serde(default)]
    pub minute_of_day: Option<u64>,
}

impl QueryEvent {
    pub fn minute(&self) -> u64 {
        self.day * MINUTES_PER_DAY + self.minute_of_day.unwrap_or(MINUTES_PER_DAY - 1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub devices: usize,
    pub horizon_minutes: u64,
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Per-advertisement, per-receiver independent drop probability.
    #[serde(default)]
    pub loss_probability: f64,
    #[serde(default)]
    pub contacts: Vec<ContactInterval>,
    #[serde(default)]
    pub diagnoses: Vec<DiagnosisEvent>,
    /// Explicit query schedule; when absent every device queries once per
    /// day at 23:59.
    #[serde(default)]
    pub queries: Option<Vec<QueryEvent>>,
    #[serde(default)]
    pub match_policy: MatchPolicy,
    #[serde(default)]
    pub group_mode: GroupMode,
    /// Calendar date of simulated day 0.
    #[serde(default = "crate::backend::default_epoch")]
    pub start_date: NaiveDate,
    /// Protocol behaviour is dual-slot advertising; turning it off is a
    /// test-only switch demonstrating the carryover failure.
    #[serde(default = "default_true")]
    pub dual_slot: bool,
    #[serde(default = "default_ha_credential")]
    pub ha_credential: String,
}

fn default_true() -> bool {
    true
}

fn default_ha_credential() -> String {
    "ha-simulated".to_string()
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.devices == 0 {
            return Err(ScenarioError::NoDevices);
        }
        if self.horizon_minutes == 0 {
            return Err(ScenarioError::EmptyHorizon);
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(ScenarioError::BadLoss);
        }
        for (i, c) in self.contacts.iter().enumerate() {
            if c.a >= self.devices || c.b >= self.devices {
                return Err(ScenarioError::ContactDeviceRange(i));
            }
            if c.a == c.b {
                return Err(ScenarioError::SelfContact(i));
            }
            if c.start_minute >= c.end_minute || c.end_minute > self.horizon_minutes {
                return Err(ScenarioError::ContactInterval(i));
            }
        }
        for d in &self.diagnoses {
            if d.device >= self.devices {
                return Err(ScenarioError::EventDeviceRange);
            }
            if d.minute() >= self.horizon_minutes {
                return Err(ScenarioError::EventOutsideHorizon);
            }
        }
        if let Some(queries) = &self.queries {
            for q in queries {
                if q.device >= self.devices {
                    return Err(ScenarioError::EventDeviceRange);
                }
                if q.minute() >= self.horizon_minutes {
                    return Err(ScenarioError::EventOutsideHorizon);
                }
            }
        }
        Ok(())
    }

    /// Ledger configuration consistent with this scenario.
    pub fn ledger_config(&self) -> LedgerConfig {
        LedgerConfig {
            params: crate::bloom::BloomParams::DEFAULT,
            policy: self.match_policy,
            epoch: self.start_date,
            ha_credentials: [self.ha_credential.clone()].into_iter().collect(),
        }
    }
}
