//! Desk-scale ledger back-end: health-authority token issuance, an
//! append-only log of uploaded contact filters, and the query contract that
//! matches an uploaded query filter against stored records by bitwise AND.
//!
//! The ledger never reads the host clock — every operation takes an explicit
//! `now`, so runs are reproducible. Consensus machinery is out of scope; an
//! optional lockstep replica wrapper recomputes every operation on N copies
//! and surfaces any divergence.

pub mod http;

use crate::bloom::{BloomFilter, BloomParams};
use crate::time::{self, Timestamp, SECONDS_PER_DAY};
use chrono::NaiveDate;
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

pub const TOKEN_LEN: usize = 16;
pub const TOKEN_VALIDITY_SECS: u64 = 24 * 60 * 60;
/// Records older than this never match a query.
pub const MATCH_WINDOW_DAYS: u64 = 21;

pub type TokenValue = [u8; TOKEN_LEN];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown health-authority credential")]
    Unauthorized,
    #[error("access token expired")]
    TokenExpired,
    #[error("access token unknown")]
    TokenUnknown,
    #[error("access token already used")]
    TokenReused,
    #[error("filter params do not match the ledger's")]
    ParamsMismatch,
    #[error("t_old outside the 21-day window")]
    InvalidWindow,
    #[error("replicas diverged on {0}")]
    ReplicaDivergence(&'static str),
}

/// Single-use upload authorization, valid for 24 hours from issuance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessToken {
    pub value: TokenValue,
    pub issued_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct TokenState {
    issued_at: Timestamp,
    used: bool,
}

/// One committed upload. Records are append-only: they are never mutated or
/// removed, and `tx_id` increases strictly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerRecord {
    pub tx_id: u64,
    pub cbf: BloomFilter,
    pub upload_time: Timestamp,
}

/// How many shared bits count as a match.
///
/// The fixed threshold defaults to k = 3, the footprint of a single shared
/// encounter in an otherwise empty intersection. The statistical mode instead
/// requires the intersection popcount to exceed the expected random overlap
/// `E = popcount(q) * popcount(c) / m` by `c` standard deviations — at high
/// fill a single genuine encounter is indistinguishable from that noise,
/// which the acceptance suite demonstrates rather than hides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MatchPolicy {
    FixedThreshold { theta: u64 },
    Statistical { c: f64 },
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy::FixedThreshold { theta: 3 }
    }
}

impl MatchPolicy {
    pub fn matches(&self, intersection: u64, qbf_pop: u64, cbf_pop: u64, bits: u64) -> bool {
        match *self {
            MatchPolicy::FixedThreshold { theta } => intersection >= theta,
            MatchPolicy::Statistical { c } => {
                let expected = qbf_pop as f64 * cbf_pop as f64 / bits as f64;
                intersection as f64 >= expected + c * expected.sqrt()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LedgerConfig {
    pub params: BloomParams,
    pub policy: MatchPolicy,
    /// Calendar date of simulated day 0; used to interpret `t_old`.
    pub epoch: NaiveDate,
    pub ha_credentials: HashSet<String>,
}

impl LedgerConfig {
    pub fn new(ha_credentials: impl IntoIterator<Item = String>) -> Self {
        LedgerConfig {
            params: BloomParams::DEFAULT,
            policy: MatchPolicy::default(),
            epoch: default_epoch(),
            ha_credentials: ha_credentials.into_iter().collect(),
        }
    }
}

pub fn default_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date")
}

pub struct Ledger {
    config: LedgerConfig,
    records: Vec<LedgerRecord>,
    tokens: HashMap<TokenValue, TokenState>,
    rng: ChaCha20Rng,
}

impl Ledger {
    /// `seed` drives token generation only, so replicas created with the same
    /// seed issue identical tokens.
    pub fn new(config: LedgerConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        Ledger { config, records: Vec::new(), tokens: HashMap::new(), rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    /// Issue a fresh single-use token to a known health authority.
    pub fn issue_token(&mut self, ha_credential: &str, now: Timestamp) -> Result<AccessToken, LedgerError> {
        if !self.config.ha_credentials.contains(ha_credential) {
            return Err(LedgerError::Unauthorized);
        }
        let mut value = [0u8; TOKEN_LEN];
        loop {
            self.rng.fill_bytes(&mut value);
            if !self.tokens.contains_key(&value) {
                break;
            }
        }
        self.tokens.insert(value, TokenState { issued_at: now, used: false });
        Ok(AccessToken { value, issued_at: now })
    }

    /// Consume a token and append the uploaded filter. The token is spent
    /// even if it had expired; it was never reusable anyway.
    pub fn upload_cbf(&mut self, token: &TokenValue, cbf: BloomFilter, now: Timestamp) -> Result<u64, LedgerError> {
        if *cbf.params() != self.config.params {
            return Err(LedgerError::ParamsMismatch);
        }
        let state = self.tokens.get_mut(token).ok_or(LedgerError::TokenUnknown)?;
        if state.used {
            return Err(LedgerError::TokenReused);
        }
        if now.0.saturating_sub(state.issued_at.0) > TOKEN_VALIDITY_SECS {
            return Err(LedgerError::TokenExpired);
        }
        state.used = true;
        let tx_id = self.records.last().map_or(0, |r| r.tx_id) + 1;
        self.records.push(LedgerRecord { tx_id, cbf, upload_time: now });
        Ok(tx_id)
    }

    /// Match a query filter against stored records. Scans only records
    /// uploaded on or after `t_old` and within the last 21 days; the response
    /// is a bare boolean — never the matching record.
    pub fn check_exposure(&self, qbf: &BloomFilter, t_old: NaiveDate, now: Timestamp) -> Result<bool, LedgerError> {
        if *qbf.params() != self.config.params {
            return Err(LedgerError::ParamsMismatch);
        }
        let today = now.day();
        let t_old_day = time::day_for_date(self.config.epoch, t_old).ok_or(LedgerError::InvalidWindow)?;
        if t_old_day > today || today - t_old_day > MATCH_WINDOW_DAYS {
            return Err(LedgerError::InvalidWindow);
        }
        let window_start = Timestamp::start_of_day(t_old_day);
        let retention_floor = now.0.saturating_sub(MATCH_WINDOW_DAYS * SECONDS_PER_DAY);

        let bits = qbf.params().bits as u64;
        for record in &self.records {
            if record.upload_time < window_start || record.upload_time.0 < retention_floor {
                continue;
            }
            let t = BloomFilter::intersect_popcount(qbf, &record.cbf)
                .map_err(|_| LedgerError::ParamsMismatch)?;
            let matched = match self.config.policy {
                MatchPolicy::FixedThreshold { theta } => t >= theta,
                MatchPolicy::Statistical { .. } => {
                    self.config.policy.matches(t, qbf.popcount(), record.cbf.popcount(), bits)
                }
            };
            if matched {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Analytical bound `(t/m)^k` on the false-positive probability of the
    /// intersection between `qbf` and one stored record.
    pub fn intersection_fpr_bound(&self, t: u64) -> f64 {
        let m = self.config.params.bits as f64;
        (t as f64 / m).powi(self.config.params.hashes as i32)
    }
}

/// Lockstep validation stand-in for consensus: every operation runs on all
/// replicas and any divergence is reported instead of a result.
pub struct ReplicatedLedger {
    replicas: Vec<Ledger>,
}

impl ReplicatedLedger {
    pub fn new(config: LedgerConfig, seed: u64, replicas: usize) -> Self {
        assert!(replicas >= 1);
        ReplicatedLedger {
            replicas: (0..replicas).map(|_| Ledger::new(config.clone(), seed)).collect(),
        }
    }

    pub fn issue_token(&mut self, ha_credential: &str, now: Timestamp) -> Result<AccessToken, LedgerError> {
        let results: Vec<_> =
            self.replicas.iter_mut().map(|l| l.issue_token(ha_credential, now)).collect();
        Self::agree(results, "issue_token")
    }

    pub fn upload_cbf(&mut self, token: &TokenValue, cbf: BloomFilter, now: Timestamp) -> Result<u64, LedgerError> {
        let results: Vec<_> = self
            .replicas
            .iter_mut()
            .map(|l| l.upload_cbf(token, cbf.clone(), now))
            .collect();
        Self::agree(results, "upload_cbf")
    }

    pub fn check_exposure(&self, qbf: &BloomFilter, t_old: NaiveDate, now: Timestamp) -> Result<bool, LedgerError> {
        let results: Vec<_> =
            self.replicas.iter().map(|l| l.check_exposure(qbf, t_old, now)).collect();
        Self::agree(results, "check_exposure")
    }

    fn agree<T: PartialEq>(mut results: Vec<Result<T, LedgerError>>, op: &'static str) -> Result<T, LedgerError> {
        let first = results.remove(0);
        if results.iter().all(|r| *r == first) {
            first
        } else {
            Err(LedgerError::ReplicaDivergence(op))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::FilterRole;

    fn ledger() -> Ledger {
        Ledger::new(LedgerConfig::new(["ha-test".to_string()]), 7)
    }

    fn filter_with(items: &[&[u8]], role: FilterRole) -> BloomFilter {
        let mut f = BloomFilter::new(BloomParams::DEFAULT, role);
        for item in items {
            f.insert(item);
        }
        f
    }

    #[test]
    fn token_issue_requires_credential() {
        let mut l = ledger();
        assert_eq!(l.issue_token("nobody", Timestamp(0)), Err(LedgerError::Unauthorized));
        let t1 = l.issue_token("ha-test", Timestamp(0)).unwrap();
        let t2 = l.issue_token("ha-test", Timestamp(0)).unwrap();
        assert_ne!(t1.value, t2.value);
    }

    #[test]
    fn upload_lifecycle_and_token_rules() {
        let mut l = ledger();
        let cbf = filter_with(&[b"enc-1"], FilterRole::Contact);

        // exactly 24h after issuance is still valid
        let token = l.issue_token("ha-test", Timestamp(1_000)).unwrap();
        let boundary = Timestamp(1_000 + TOKEN_VALIDITY_SECS);
        assert_eq!(l.upload_cbf(&token.value, cbf.clone(), boundary).unwrap(), 1);
        assert_eq!(
            l.upload_cbf(&token.value, cbf.clone(), boundary),
            Err(LedgerError::TokenReused)
        );
        assert_eq!(
            l.upload_cbf(&[9u8; 16], cbf.clone(), boundary),
            Err(LedgerError::TokenUnknown)
        );

        // 24h + 1s is expired
        let token2 = l.issue_token("ha-test", boundary).unwrap();
        let too_late = Timestamp(boundary.0 + TOKEN_VALIDITY_SECS + 1);
        assert_eq!(
            l.upload_cbf(&token2.value, cbf.clone(), too_late),
            Err(LedgerError::TokenExpired)
        );

        let token3 = l.issue_token("ha-test", too_late).unwrap();
        assert_eq!(l.upload_cbf(&token3.value, cbf, too_late).unwrap(), 2);
        assert_eq!(l.records().len(), 2);
        assert!(l.records().windows(2).all(|w| w[0].tx_id < w[1].tx_id));
    }

    #[test]
    fn params_mismatch_rejected() {
        let mut l = ledger();
        let odd = BloomFilter::new(BloomParams::new(64, 3).unwrap(), FilterRole::Contact);
        let token = l.issue_token("ha-test", Timestamp(0)).unwrap();
        assert_eq!(l.upload_cbf(&token.value, odd.clone(), Timestamp(0)), Err(LedgerError::ParamsMismatch));
        assert_eq!(
            l.check_exposure(&odd, default_epoch(), Timestamp(0)),
            Err(LedgerError::ParamsMismatch)
        );
    }

    #[test]
    fn exposure_matches_identical_filter() {
        let mut l = ledger();
        let cbf = filter_with(&[b"enc-a", b"enc-b"], FilterRole::Contact);
        let token = l.issue_token("ha-test", Timestamp(0)).unwrap();
        l.upload_cbf(&token.value, cbf.clone(), Timestamp(10)).unwrap();

        let qbf = cbf.with_role(FilterRole::Query);
        assert!(l.check_exposure(&qbf, default_epoch(), Timestamp(20)).unwrap());

        let empty = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Query);
        assert!(!l.check_exposure(&empty, default_epoch(), Timestamp(20)).unwrap());
    }

    #[test]
    fn single_shared_encounter_matches_at_low_fill() {
        let mut l = ledger();
        let mut cbf = filter_with(&[b"shared-encid"], FilterRole::Contact);
        for i in 0..9u32 {
            cbf.insert(format!("other-{i}").as_bytes());
        }
        let token = l.issue_token("ha-test", Timestamp(0)).unwrap();
        l.upload_cbf(&token.value, cbf, Timestamp(10)).unwrap();

        let qbf = filter_with(&[b"shared-encid"], FilterRole::Query);
        assert!(l.check_exposure(&qbf, default_epoch(), Timestamp(20)).unwrap());

        let unrelated = filter_with(&[b"not-shared"], FilterRole::Query);
        assert!(!l.check_exposure(&unrelated, default_epoch(), Timestamp(20)).unwrap());
    }

    #[test]
    fn stale_records_never_match() {
        let mut l = ledger();
        let cbf = filter_with(&[b"enc"], FilterRole::Contact);
        let token = l.issue_token("ha-test", Timestamp(0)).unwrap();
        l.upload_cbf(&token.value, cbf.clone(), Timestamp(10)).unwrap();
        let qbf = cbf.with_role(FilterRole::Query);

        // mid-day 21: t_old = day 0 is still a legal window and covers the
        // upload, but the record itself is now more than 21 days old
        let now = Timestamp(21 * SECONDS_PER_DAY + 43_200);
        assert!(!l.check_exposure(&qbf, default_epoch(), now).unwrap());

        // a day earlier the same query matched
        let earlier = Timestamp(20 * SECONDS_PER_DAY);
        assert!(l.check_exposure(&qbf, default_epoch(), earlier).unwrap());
    }

    #[test]
    fn window_validation() {
        let l = ledger();
        let qbf = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Query);
        let now = Timestamp(30 * SECONDS_PER_DAY);
        // future t_old
        assert_eq!(
            l.check_exposure(&qbf, time::date_for_day(default_epoch(), 31), now),
            Err(LedgerError::InvalidWindow)
        );
        // more than 21 days back
        assert_eq!(
            l.check_exposure(&qbf, time::date_for_day(default_epoch(), 8), now),
            Err(LedgerError::InvalidWindow)
        );
        // exactly 21 days back is allowed
        assert!(!l.check_exposure(&qbf, time::date_for_day(default_epoch(), 9), now).unwrap());
        // before the epoch entirely
        assert_eq!(
            l.check_exposure(&qbf, default_epoch() - chrono::Days::new(1), now),
            Err(LedgerError::InvalidWindow)
        );
    }

    #[test]
    fn t_old_bounds_the_scan() {
        let mut l = ledger();
        let cbf = filter_with(&[b"enc"], FilterRole::Contact);
        let token = l.issue_token("ha-test", Timestamp(0)).unwrap();
        // uploaded on day 0
        l.upload_cbf(&token.value, cbf.clone(), Timestamp(100)).unwrap();

        let qbf = cbf.with_role(FilterRole::Query);
        let now = Timestamp(2 * SECONDS_PER_DAY);
        // t_old = day 1 excludes the day-0 upload
        assert!(!l.check_exposure(&qbf, time::date_for_day(default_epoch(), 1), now).unwrap());
        assert!(l.check_exposure(&qbf, default_epoch(), now).unwrap());
    }

    #[test]
    fn statistical_policy_compensates_fill() {
        let policy = MatchPolicy::Statistical { c: 4.0 };
        // empty-ish filters: one shared encounter (3 bits) clears the bar
        assert!(policy.matches(3, 3, 30, 800_000));
        // at heavy fill the same 3 bits drown in expected overlap
        let qbf_pop = 63_000u64;
        let cbf_pop = 63_000u64;
        let expected = (qbf_pop * cbf_pop) as f64 / 800_000.0;
        assert!(!policy.matches(expected as u64 + 3, qbf_pop, cbf_pop, 800_000));
    }

    #[test]
    fn append_only_prefix_preserved() {
        let mut l = ledger();
        let cbf = filter_with(&[b"enc"], FilterRole::Contact);
        let t1 = l.issue_token("ha-test", Timestamp(0)).unwrap();
        l.upload_cbf(&t1.value, cbf.clone(), Timestamp(1)).unwrap();
        let snapshot: Vec<u64> = l.records().iter().map(|r| r.tx_id).collect();

        let t2 = l.issue_token("ha-test", Timestamp(2)).unwrap();
        l.upload_cbf(&t2.value, cbf, Timestamp(3)).unwrap();
        let after: Vec<u64> = l.records().iter().map(|r| r.tx_id).collect();
        assert_eq!(&after[..snapshot.len()], snapshot.as_slice());
    }

    #[test]
    fn replicas_stay_in_lockstep() {
        let mut r = ReplicatedLedger::new(LedgerConfig::new(["ha-test".to_string()]), 3, 4);
        let cbf = filter_with(&[b"enc"], FilterRole::Contact);
        let token = r.issue_token("ha-test", Timestamp(0)).unwrap();
        let tx = r.upload_cbf(&token.value, cbf.clone(), Timestamp(5)).unwrap();
        assert_eq!(tx, 1);
        let qbf = cbf.with_role(FilterRole::Query);
        assert!(r.check_exposure(&qbf, default_epoch(), Timestamp(10)).unwrap());
    }

    #[test]
    fn intersection_bound_reported() {
        let l = ledger();
        let bound = l.intersection_fpr_bound(63_000);
        // worst-case fill (t/m)^k = (63000/800000)^3
        assert!((bound - 0.07875f64.powi(3)).abs() < 1e-12);
    }
}
