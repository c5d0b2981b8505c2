//! Deterministic discrete-time simulator: a broadcast channel with
//! configurable loss, scripted contacts, diagnosis/upload/query flows, attack
//! scenarios, and a false-positive-rate experiment. The time quantum is one
//! minute (the advertisement rate); every source of randomness is a ChaCha20
//! stream derived from the single scenario seed, so identical inputs produce
//! byte-identical reports.

mod attack;
mod fpr;
mod run;
mod scenario;

pub use attack::{run_attack, AttackKind, AttackParams, AttackVerdict};
pub use fpr::{fpr_experiment, FprPoint};
pub use run::{run, MetricsReport, SimError, SimOracle, Simulation};
pub use scenario::{ContactInterval, DiagnosisEvent, QueryEvent, Scenario, ScenarioError};

use crate::backend::http::{BackendClient, ClientError, ManualClock};
use crate::backend::{Ledger, LedgerError, TokenValue};
use crate::bloom::BloomFilter;
use crate::time::Timestamp;
use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Independent ChaCha20 stream for one named purpose under a master seed.
pub fn derive_rng(seed: u64, label: &str, index: u64) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_be_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_be_bytes());
    ChaCha20Rng::from_seed(hasher.finalize().into())
}

#[derive(Debug, thiserror::Error)]
pub enum BackendApiError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// The simulator's view of the back-end: in-process by default, or the HTTP
/// API when exercising the full wire path.
pub trait BackendApi {
    fn issue_token(&mut self, ha_credential: &str, now: Timestamp) -> Result<TokenValue, BackendApiError>;
    fn upload_cbf(&mut self, token: &TokenValue, cbf: &BloomFilter, now: Timestamp) -> Result<u64, BackendApiError>;
    fn check_exposure(&mut self, qbf: &BloomFilter, t_old: NaiveDate, now: Timestamp) -> Result<bool, BackendApiError>;
}

pub struct InProcessBackend {
    pub ledger: Ledger,
}

impl InProcessBackend {
    pub fn new(ledger: Ledger) -> Self {
        InProcessBackend { ledger }
    }
}

impl BackendApi for InProcessBackend {
    fn issue_token(&mut self, ha_credential: &str, now: Timestamp) -> Result<TokenValue, BackendApiError> {
        Ok(self.ledger.issue_token(ha_credential, now)?.value)
    }

    fn upload_cbf(&mut self, token: &TokenValue, cbf: &BloomFilter, now: Timestamp) -> Result<u64, BackendApiError> {
        Ok(self.ledger.upload_cbf(token, cbf.clone(), now)?)
    }

    fn check_exposure(&mut self, qbf: &BloomFilter, t_old: NaiveDate, now: Timestamp) -> Result<bool, BackendApiError> {
        Ok(self.ledger.check_exposure(qbf, t_old, now)?)
    }
}

/// HTTP-backed adapter; drives the server's injected clock in lockstep with
/// simulated time before each call.
pub struct HttpBackend {
    pub client: BackendClient,
    pub clock: Arc<ManualClock>,
}

impl BackendApi for HttpBackend {
    fn issue_token(&mut self, ha_credential: &str, now: Timestamp) -> Result<TokenValue, BackendApiError> {
        self.clock.set(now);
        Ok(self.client.issue_token(ha_credential)?)
    }

    fn upload_cbf(&mut self, token: &TokenValue, cbf: &BloomFilter, now: Timestamp) -> Result<u64, BackendApiError> {
        self.clock.set(now);
        Ok(self.client.upload_cbf(token, cbf)?)
    }

    fn check_exposure(&mut self, qbf: &BloomFilter, t_old: NaiveDate, now: Timestamp) -> Result<bool, BackendApiError> {
        self.clock.set(now);
        Ok(self.client.check_exposure(qbf, t_old)?)
    }
}
