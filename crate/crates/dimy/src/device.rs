//! Per-device protocol state machine.
//!
//! A device keeps two staggered EphID slots. Each slot draws a fresh keypair
//! every 30 minutes, pre-splits the EphID into 30 shares, and broadcasts one
//! share per minute; the second slot is offset by 15 minutes so that any
//! 15-minute contact window falls entirely inside the lifetime of at least
//! one EphID (this closes the carryover gap where a contact straddling a
//! rotation would never collect enough shares of either identifier).
//!
//! On the receive side, shares are grouped by the advertised 3-byte EphID
//! hash. Once 15 distinct indices have arrived the EphID is reconstructed and
//! verified against that hash; on success the device derives one encounter
//! identifier per own active slot, inserts the digests into today's daily
//! Bloom filter, and forgets the digests, the peer EphID, and the collected
//! shares. Nothing that identifies a peer outlives that insertion.

use crate::ble::{self, Advertisement, EPH_HASH_LEN};
use crate::bloom::{BloomFilter, BloomParams, FilterRole};
use crate::crypto::{EncId, GroupElement, GroupParams, Scalar};
use crate::sss::{self, Share};
use crate::time::Minute;
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// EphID lifetime in minutes; also the share count n (one share per minute).
pub const EPHID_LIFETIME_MINUTES: u64 = 30;
/// Offset between the two slots; also the reconstruction threshold k.
pub const SLOT_STAGGER_MINUTES: u64 = 15;
/// A fresh random MAC every 15 minutes — about half an EphID epoch.
pub const MAC_ROTATION_MINUTES: u64 = 15;
/// Days of daily Bloom filters kept on the device (incubation window).
pub const DBF_RETENTION_DAYS: u64 = 21;
/// Pending share sets older than one EphID lifetime can never complete.
const PENDING_TTL_MINUTES: u64 = EPHID_LIFETIME_MINUTES;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeviceError {
    #[error("clock went backwards: last tick {last:?}, got {now:?}")]
    ClockRegression { last: Minute, now: Minute },
    #[error("no daily filters retained yet")]
    NoData,
}

#[derive(Clone, Debug)]
pub struct DeviceConfig {
    pub group: GroupParams,
    pub bloom: BloomParams,
    /// Shares required to reconstruct (k).
    pub shares_k: u8,
    /// Shares per EphID, one broadcast per minute (n).
    pub shares_n: u8,
    /// Protocol behaviour is two staggered slots; disabling this is a
    /// test-only switch used to demonstrate the carryover failure mode.
    pub dual_slot: bool,
}

impl DeviceConfig {
    pub fn new(group: GroupParams) -> Self {
        DeviceConfig {
            group,
            bloom: BloomParams::DEFAULT,
            shares_k: SLOT_STAGGER_MINUTES as u8,
            shares_n: EPHID_LIFETIME_MINUTES as u8,
            dual_slot: true,
        }
    }
}

struct EphSlot {
    secret: Scalar,
    ephid: GroupElement,
    eph_hash: [u8; EPH_HASH_LEN],
    shares: Vec<Share>,
    rotate_at: Minute,
    next_index: u8,
}

impl EphSlot {
    fn fresh(config: &DeviceConfig, rng: &mut ChaCha20Rng, first_index: u8, rotate_at: Minute) -> Self {
        let (secret, ephid) = config.group.keygen(rng);
        let shares = sss::split(ephid.as_bytes(), config.shares_k, config.shares_n, rng)
            .expect("protocol share parameters are valid");
        let eph_hash = ble::truncated_ephid_hash(&ephid);
        EphSlot { secret, ephid, eph_hash, shares, rotate_at, next_index: first_index }
    }

    fn rotate(&mut self, config: &DeviceConfig, rng: &mut ChaCha20Rng, now: Minute) {
        *self = EphSlot::fresh(config, rng, 1, Minute(now.0 + EPHID_LIFETIME_MINUTES));
    }
}

#[derive(Clone)]
struct PendingEphId {
    collected: BTreeMap<u8, Vec<u8>>,
    first_seen: Minute,
    last_seen: Minute,
}

/// A registered encounter, reported to the caller (e.g. the simulator's
/// ground-truth oracle). The device itself retains none of these fields.
#[derive(Clone, Debug)]
pub struct EncounterEvent {
    pub minute: Minute,
    pub eph_hash: [u8; EPH_HASH_LEN],
    pub peer_ephid: GroupElement,
    /// One digest per own active slot, all inserted into today's DBF.
    pub digests: Vec<EncId>,
}

pub struct Device {
    config: DeviceConfig,
    rng: ChaCha20Rng,
    clock: Option<Minute>,
    slots: Vec<EphSlot>,
    pending: BTreeMap<[u8; EPH_HASH_LEN], PendingEphId>,
    /// (day index, filter); at most 21 entries, oldest dropped.
    dbf_ring: VecDeque<(u64, BloomFilter)>,
    mac: [u8; 6],
    mac_set_at: Minute,
}

impl Device {
    pub fn new(config: DeviceConfig, mut rng: ChaCha20Rng, start: Minute) -> Self {
        let mut slots = Vec::with_capacity(2);
        slots.push(EphSlot::fresh(&config, &mut rng, 1, Minute(start.0 + EPHID_LIFETIME_MINUTES)));
        if config.dual_slot {
            // The second slot begins mid-life so its rotations stay offset by
            // 15 minutes: it first emits indices 16..=30, then rotates.
            slots.push(EphSlot::fresh(
                &config,
                &mut rng,
                config.shares_k + 1,
                Minute(start.0 + SLOT_STAGGER_MINUTES),
            ));
        }
        let mut mac = [0u8; 6];
        rng.fill_bytes(&mut mac);
        Device {
            config,
            rng,
            clock: None,
            slots,
            pending: BTreeMap::new(),
            dbf_ring: VecDeque::new(),
            mac,
            mac_set_at: start,
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn current_mac(&self) -> [u8; 6] {
        self.mac
    }

    /// Canonical encodings of the EphIDs currently being advertised.
    pub fn active_ephids(&self) -> Vec<GroupElement> {
        self.slots.iter().map(|s| s.ephid.clone()).collect()
    }

    pub fn active_eph_hashes(&self) -> Vec<[u8; EPH_HASH_LEN]> {
        self.slots.iter().map(|s| s.eph_hash).collect()
    }

    /// Raw bytes of the active slot secrets. Simulation/test introspection
    /// only — the leak tests plant these as sentinels and scan every protocol
    /// artifact for them. Nothing in the protocol path calls this.
    pub fn expose_active_secrets(&self) -> Vec<Vec<u8>> {
        self.slots.iter().map(|s| s.secret.to_bytes()).collect()
    }

    /// (day, popcount) of every retained daily filter.
    pub fn dbf_days(&self) -> Vec<(u64, u64)> {
        self.dbf_ring.iter().map(|(d, f)| (*d, f.popcount())).collect()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Advance to `now`, emitting one advertisement per active slot.
    pub fn tick(&mut self, now: Minute) -> Result<Vec<Advertisement>, DeviceError> {
        if let Some(last) = self.clock {
            if now <= last {
                return Err(DeviceError::ClockRegression { last, now });
            }
        }
        self.clock = Some(now);
        self.ensure_day(now);

        for i in 0..self.slots.len() {
            if now >= self.slots[i].rotate_at {
                let (config, rng) = (&self.config, &mut self.rng);
                self.slots[i].rotate(config, rng, now);
            }
        }

        if now.0 - self.mac_set_at.0 >= MAC_ROTATION_MINUTES {
            self.rng.fill_bytes(&mut self.mac);
            self.mac_set_at = now;
        }

        self.pending.retain(|_, p| now.0 - p.first_seen.0 < PENDING_TTL_MINUTES);

        let mut adverts = Vec::with_capacity(self.slots.len());
        for slot in &mut self.slots {
            debug_assert!(slot.next_index as usize <= slot.shares.len());
            let share = slot.shares[(slot.next_index - 1) as usize].clone();
            slot.next_index += 1;
            adverts.push(Advertisement { mac: self.mac, eph_hash: slot.eph_hash, share });
        }
        Ok(adverts)
    }

    /// Process one received advertisement. Malformed or hostile input is
    /// dropped without error, per protocol. Returns the encounter event when
    /// this advertisement completed a reconstruction.
    pub fn receive(&mut self, adv: &Advertisement, now: Minute) -> Option<EncounterEvent> {
        if adv.share.payload.len() != self.config.group.element_len() {
            return None;
        }
        if adv.share.index == 0 {
            return None;
        }
        // Our own shares may bounce back through a relay; never pair with
        // ourselves.
        if self.slots.iter().any(|s| s.eph_hash == adv.eph_hash) {
            return None;
        }

        let entry = self.pending.entry(adv.eph_hash).or_insert_with(|| PendingEphId {
            collected: BTreeMap::new(),
            first_seen: now,
            last_seen: now,
        });
        entry.last_seen = now;
        entry.collected.entry(adv.share.index).or_insert_with(|| adv.share.payload.clone());

        if entry.collected.len() < self.config.shares_k as usize {
            return None;
        }

        let shares: Vec<Share> = entry
            .collected
            .iter()
            .take(self.config.shares_k as usize)
            .map(|(&index, payload)| Share { index, payload: payload.clone() })
            .collect();
        // The share set is consumed whether or not verification passes.
        self.pending.remove(&adv.eph_hash);

        let candidate = sss::reconstruct(&shares, self.config.shares_k).ok()?;
        if ble::truncated_hash(&candidate) != adv.eph_hash {
            // Mixed or forged shares; discard silently.
            return None;
        }
        let peer_ephid = self.config.group.decode(&candidate).ok()?;

        self.ensure_day(now);
        let mut digests = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let encid = self
                .config
                .group
                .derive_encid(&slot.secret, &peer_ephid)
                .expect("validated peer element");
            digests.push(encid);
        }
        let today = self.dbf_ring.back_mut().expect("ensure_day populated the ring");
        for digest in &digests {
            today.1.insert(digest.as_bytes());
        }
        Some(EncounterEvent { minute: now, eph_hash: adv.eph_hash, peer_ephid, digests })
    }

    /// Union of all retained DBFs, tagged as an upload (contact) filter.
    pub fn build_cbf(&self) -> Result<BloomFilter, DeviceError> {
        self.union_ring(FilterRole::Contact).map(|(f, _)| f)
    }

    /// Union of all retained DBFs plus the day of the oldest one (T_old).
    pub fn build_qbf(&self) -> Result<(BloomFilter, u64), DeviceError> {
        self.union_ring(FilterRole::Query)
    }

    fn union_ring(&self, role: FilterRole) -> Result<(BloomFilter, u64), DeviceError> {
        let mut iter = self.dbf_ring.iter();
        let (oldest_day, first) = iter.next().ok_or(DeviceError::NoData)?;
        let mut out = first.clone().with_role(role);
        for (_, f) in iter {
            out.union_in_place(f).expect("ring filters share params");
        }
        Ok((out, *oldest_day))
    }

    fn ensure_day(&mut self, now: Minute) {
        let day = now.day();
        let needs_new = match self.dbf_ring.back() {
            Some((last, _)) => *last < day,
            None => true,
        };
        if needs_new {
            self.dbf_ring.push_back((day, BloomFilter::new(self.config.bloom, FilterRole::Daily)));
        }
        let cutoff = day.saturating_sub(DBF_RETENTION_DAYS - 1);
        while matches!(self.dbf_ring.front(), Some((d, _)) if *d < cutoff) {
            self.dbf_ring.pop_front();
        }
    }

    /// Complete byte-level dump of everything the device retains, used by the
    /// ephemerality tests: own secrets, own EphIDs and shares, pending share
    /// sets, the filter ring, and the MAC. Reconstructed peer EphIDs and
    /// encounter digests are never part of it because they are never stored.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let push_bytes = |out: &mut Vec<u8>, b: &[u8]| {
            out.extend_from_slice(&(b.len() as u32).to_be_bytes());
            out.extend_from_slice(b);
        };
        push_bytes(&mut out, self.config.group.name().as_bytes());
        out.push(self.config.shares_k);
        out.push(self.config.shares_n);
        out.push(self.config.dual_slot as u8);
        out.extend_from_slice(&self.clock.map_or(u64::MAX, |m| m.0).to_be_bytes());
        out.extend_from_slice(&self.mac);
        out.extend_from_slice(&self.mac_set_at.0.to_be_bytes());

        out.push(self.slots.len() as u8);
        for slot in &self.slots {
            push_bytes(&mut out, &slot.secret.to_bytes());
            push_bytes(&mut out, slot.ephid.as_bytes());
            out.extend_from_slice(&slot.eph_hash);
            out.extend_from_slice(&slot.rotate_at.0.to_be_bytes());
            out.push(slot.next_index);
            out.push(slot.shares.len() as u8);
            for share in &slot.shares {
                out.push(share.index);
                push_bytes(&mut out, &share.payload);
            }
        }

        out.extend_from_slice(&(self.pending.len() as u32).to_be_bytes());
        for (hash, entry) in &self.pending {
            out.extend_from_slice(hash);
            out.extend_from_slice(&entry.first_seen.0.to_be_bytes());
            out.extend_from_slice(&entry.last_seen.0.to_be_bytes());
            out.extend_from_slice(&(entry.collected.len() as u32).to_be_bytes());
            for (index, payload) in &entry.collected {
                out.push(*index);
                push_bytes(&mut out, payload);
            }
        }

        out.extend_from_slice(&(self.dbf_ring.len() as u32).to_be_bytes());
        for (day, filter) in &self.dbf_ring {
            out.extend_from_slice(&day.to_be_bytes());
            push_bytes(&mut out, &filter.serialize());
        }
        out
    }
}
