//! The simulation loop. Each minute: every device ticks (in index order),
//! in-contact peers receive the emitted frames independently with probability
//! `1 - loss`, then scheduled diagnosis uploads and exposure queries run.
//! Exposure outcomes are scored against a ground truth derived purely from
//! the contact schedule, never from filter contents.

use super::scenario::{QueryEvent, Scenario};
use super::{derive_rng, BackendApi, BackendApiError, InProcessBackend};
use crate::backend::Ledger;
use crate::ble;
use crate::bloom::fpr_estimate;
use crate::crypto::EncId;
use crate::device::{Device, DeviceConfig, DeviceError, EncounterEvent};
use crate::time::{Minute, MINUTES_PER_DAY};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] super::ScenarioError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Backend(#[from] BackendApiError),
    #[error("codec failure on simulated channel: {0}")]
    Codec(#[from] ble::CodecError),
    #[error("simulation already finished")]
    Finished,
}

/// Ground-truth observer. Holds everything the privacy tests need to scan
/// for: every digest a device inserted and every EphID a device advertised.
/// This data lives in the harness, never in device state.
#[derive(Default)]
pub struct SimOracle {
    pub digests_by_device: Vec<HashSet<[u8; 32]>>,
    pub ephids_by_device: Vec<HashSet<Vec<u8>>>,
    pub events: Vec<(usize, EncounterEvent)>,
}

impl SimOracle {
    fn new(devices: usize) -> Self {
        SimOracle {
            digests_by_device: vec![HashSet::new(); devices],
            ephids_by_device: vec![HashSet::new(); devices],
            events: Vec::new(),
        }
    }

    fn record_event(&mut self, device: usize, event: &EncounterEvent) {
        for d in &event.digests {
            self.digests_by_device[device].insert(*d.as_bytes());
        }
        self.events.push((device, event.clone()));
    }

    /// Digests present on both sides — the symmetric contact record.
    pub fn common_digests(&self, a: usize, b: usize) -> Vec<[u8; 32]> {
        self.digests_by_device[a].intersection(&self.digests_by_device[b]).copied().collect()
    }

    pub fn all_digests(&self) -> impl Iterator<Item = &[u8; 32]> {
        self.digests_by_device.iter().flatten()
    }

    /// EphIDs advertised by anyone other than `device`.
    pub fn peer_ephids(&self, device: usize) -> impl Iterator<Item = &Vec<u8>> {
        self.ephids_by_device
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != device)
            .flat_map(|(_, set)| set.iter())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DbfMetrics {
    pub day: u64,
    pub items_inserted: u64,
    pub popcount: u64,
    /// Eq.-1 estimate for a filter holding `items_inserted` entries.
    pub predicted_fpr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviceMetrics {
    pub device: usize,
    pub adverts_sent: u64,
    pub adverts_received: u64,
    pub encounters_registered: u64,
    pub dbf: Vec<DbfMetrics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct UploadRecord {
    pub device: usize,
    pub minute: u64,
    pub tx_id: u64,
    pub cbf_bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryOutcome {
    pub device: usize,
    pub minute: u64,
    pub t_old_day: u64,
    pub exposed: bool,
    pub ground_truth: bool,
    pub classification: &'static str,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExposureCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TransferMetrics {
    pub cbf_upload_bytes: u64,
    pub qbf_upload_bytes: u64,
    pub token_bytes: u64,
    pub query_responses: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub horizon_minutes: u64,
    pub devices: Vec<DeviceMetrics>,
    pub uploads: Vec<UploadRecord>,
    pub queries: Vec<QueryOutcome>,
    pub exposure_counts: ExposureCounts,
    pub transfer: TransferMetrics,
    /// Positive-query filters held for health-authority verification.
    pub qbfs_retained: u64,
}

impl MetricsReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }
}

pub struct Simulation<B: BackendApi> {
    scenario: Scenario,
    backend: B,
    devices: Vec<Device>,
    channel_rng: ChaCha20Rng,
    oracle: SimOracle,
    next_minute: u64,
    parallel: bool,
    // accumulators
    adverts_sent: Vec<u64>,
    adverts_received: Vec<u64>,
    items_inserted: Vec<Vec<(u64, u64)>>, // per device: (day, digests inserted)
    uploads: Vec<UploadRecord>,
    queries: Vec<QueryOutcome>,
    transfer: TransferMetrics,
    retained_qbfs: Vec<(usize, u64, crate::bloom::BloomFilter)>,
}

impl<B: BackendApi> Simulation<B> {
    pub fn new(scenario: Scenario, backend: B) -> Result<Self, SimError> {
        scenario.validate()?;
        let group = scenario.group_mode.params();
        let devices: Vec<Device> = (0..scenario.devices)
            .map(|i| {
                let mut config = DeviceConfig::new(group.clone());
                config.dual_slot = scenario.dual_slot;
                Device::new(config, derive_rng(scenario.seed, "device", i as u64), Minute(0))
            })
            .collect();
        let channel_rng = derive_rng(scenario.seed, "channel", 0);
        let n = scenario.devices;
        Ok(Simulation {
            scenario,
            backend,
            devices,
            channel_rng,
            oracle: SimOracle::new(n),
            next_minute: 0,
            parallel: false,
            adverts_sent: vec![0; n],
            adverts_received: vec![0; n],
            items_inserted: vec![Vec::new(); n],
            uploads: Vec::new(),
            queries: Vec::new(),
            transfer: TransferMetrics::default(),
            retained_qbfs: Vec::new(),
        })
    }

    pub fn minute(&self) -> u64 {
        self.next_minute
    }

    pub fn finished(&self) -> bool {
        self.next_minute >= self.scenario.horizon_minutes
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn oracle(&self) -> &SimOracle {
        &self.oracle
    }

    /// Step devices on worker threads with a per-minute barrier. Devices own
    /// their random streams, so this must produce reports byte-identical to
    /// the serial mode.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    /// Query filters that produced a positive match, held for verification
    /// by the health authority: (device, minute, filter).
    pub fn retained_qbfs(&self) -> &[(usize, u64, crate::bloom::BloomFilter)] {
        &self.retained_qbfs
    }

    /// Advance one simulated minute.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.finished() {
            return Err(SimError::Finished);
        }
        let m = self.next_minute;
        let now = Minute(m);
        let element_len = self.devices[0].config().group.element_len();

        // 1. everyone ticks; frames cross the simulated channel as bytes
        let ticked: Vec<Result<Vec<ble::Advertisement>, DeviceError>> = if self.parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .devices
                    .iter_mut()
                    .map(|device| scope.spawn(move || device.tick(now)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("device thread")).collect()
            })
        } else {
            self.devices.iter_mut().map(|device| device.tick(now)).collect()
        };
        let mut frames: Vec<Vec<Vec<u8>>> = Vec::with_capacity(self.devices.len());
        for (i, adverts) in ticked.into_iter().enumerate() {
            let adverts = adverts?;
            self.adverts_sent[i] += adverts.len() as u64;
            for ephid in self.devices[i].active_ephids() {
                self.oracle.ephids_by_device[i].insert(ephid.as_bytes().to_vec());
            }
            let encoded: Result<Vec<_>, _> = adverts.iter().map(ble::encode).collect();
            frames.push(encoded?);
        }

        // 2. deliveries along active contacts, each direction independent
        let loss = self.scenario.loss_probability;
        let mut seen_pairs = HashSet::new();
        let contacts = self.scenario.contacts.clone();
        for c in contacts.iter().filter(|c| c.active_at(m)) {
            let key = (c.a.min(c.b), c.a.max(c.b));
            if !seen_pairs.insert(key) {
                continue;
            }
            for (tx, rx) in [(c.a, c.b), (c.b, c.a)] {
                for frame in &frames[tx] {
                    let delivered = loss == 0.0 || !self.channel_rng.random_bool(loss);
                    if !delivered {
                        continue;
                    }
                    self.adverts_received[rx] += 1;
                    let adv = ble::decode(frame, element_len)?;
                    if let Some(event) = self.devices[rx].receive(&adv, now) {
                        self.record_insertion(rx, m, &event.digests);
                        self.oracle.record_event(rx, &event);
                    }
                }
            }
        }

        // 3. diagnosis uploads scheduled this minute
        let diagnoses: Vec<_> =
            self.scenario.diagnoses.iter().filter(|d| d.minute() == m).copied().collect();
        for d in diagnoses {
            let ts = now.timestamp();
            let token = self.backend.issue_token(&self.scenario.ha_credential.clone(), ts)?;
            self.transfer.token_bytes += token.len() as u64;
            let cbf = self.devices[d.device].build_cbf()?;
            let cbf_bytes = cbf.serialize().len() as u64;
            let tx_id = self.backend.upload_cbf(&token, &cbf, ts)?;
            self.transfer.cbf_upload_bytes += cbf_bytes;
            self.uploads.push(UploadRecord { device: d.device, minute: m, tx_id, cbf_bytes });
        }

        // 4. exposure queries scheduled this minute
        for q in self.queries_at(m) {
            let ts = now.timestamp();
            let (qbf, t_old_day) = self.devices[q.device].build_qbf()?;
            let t_old = crate::time::date_for_day(self.scenario.start_date, t_old_day);
            self.transfer.qbf_upload_bytes += qbf.serialize().len() as u64;
            let exposed = self.backend.check_exposure(&qbf, t_old, ts)?;
            self.transfer.query_responses += 1;
            if exposed {
                // positive result: the query filter is kept for verification
                // by the health authority; negative ones are dropped here
                self.retained_qbfs.push((q.device, m, qbf));
            }
            let ground_truth = self.ground_truth_exposed(q.device, m);
            let classification = match (exposed, ground_truth) {
                (true, true) => "TP",
                (true, false) => "FP",
                (false, true) => "FN",
                (false, false) => "TN",
            };
            self.queries.push(QueryOutcome {
                device: q.device,
                minute: m,
                t_old_day,
                exposed,
                ground_truth,
                classification,
            });
        }

        self.next_minute += 1;
        Ok(())
    }

    pub fn run_to_end(mut self) -> Result<MetricsReport, SimError> {
        while !self.finished() {
            self.step()?;
        }
        Ok(self.report())
    }

    pub fn report(&self) -> MetricsReport {
        let mut counts = ExposureCounts::default();
        for q in &self.queries {
            match q.classification {
                "TP" => counts.true_positive += 1,
                "FP" => counts.false_positive += 1,
                "FN" => counts.false_negative += 1,
                _ => counts.true_negative += 1,
            }
        }
        let devices = (0..self.devices.len())
            .map(|i| {
                let inserted = &self.items_inserted[i];
                let dbf = self.devices[i]
                    .dbf_days()
                    .into_iter()
                    .map(|(day, popcount)| {
                        let items: u64 = inserted
                            .iter()
                            .filter(|(d, _)| *d == day)
                            .map(|(_, n)| *n)
                            .sum();
                        DbfMetrics {
                            day,
                            items_inserted: items,
                            popcount,
                            predicted_fpr: fpr_estimate(&crate::bloom::BloomParams::DEFAULT, items),
                        }
                    })
                    .collect();
                DeviceMetrics {
                    device: i,
                    adverts_sent: self.adverts_sent[i],
                    adverts_received: self.adverts_received[i],
                    encounters_registered: self
                        .oracle
                        .events
                        .iter()
                        .filter(|(d, _)| *d == i)
                        .count() as u64,
                    dbf,
                }
            })
            .collect();
        MetricsReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            horizon_minutes: self.scenario.horizon_minutes,
            devices,
            uploads: self.uploads.clone(),
            queries: self.queries.clone(),
            exposure_counts: counts,
            transfer: self.transfer.clone(),
            qbfs_retained: self.retained_qbfs.len() as u64,
        }
    }

    fn record_insertion(&mut self, device: usize, minute: u64, digests: &[EncId]) {
        let day = Minute(minute).day();
        let n = digests.len() as u64;
        if let Some(last) = self.items_inserted[device].last_mut() {
            if last.0 == day {
                last.1 += n;
                return;
            }
        }
        self.items_inserted[device].push((day, n));
    }

    fn queries_at(&self, minute: u64) -> Vec<QueryEvent> {
        match &self.scenario.queries {
            Some(list) => list.iter().filter(|q| q.minute() == minute).copied().collect(),
            None => {
                // default: every device queries at 23:59 of every day, except
                // devices that already uploaded — the diagnosed user is the
                // source of the record and has no exposure left to check
                if minute % MINUTES_PER_DAY == MINUTES_PER_DAY - 1 {
                    let day = minute / MINUTES_PER_DAY;
                    (0..self.devices.len())
                        .filter(|device| !self.uploads.iter().any(|u| u.device == *device))
                        .map(|device| QueryEvent { device, day, minute_of_day: Some(MINUTES_PER_DAY - 1) })
                        .collect()
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Schedule-derived ground truth: the querying device had a >= 15 minute
    /// contact with a device whose upload covers that contact and is still
    /// inside both 21-day windows at query time.
    fn ground_truth_exposed(&self, device: usize, query_minute: u64) -> bool {
        let query_day = Minute(query_minute).day();
        self.scenario.contacts.iter().any(|c| {
            let Some(partner) = c.involves(device) else {
                return false;
            };
            if c.duration() < 15 {
                return false;
            }
            // nominal registration day: the 15th minute of the contact
            let reg_day = Minute(c.start_minute + 14).day();
            if reg_day + 20 < query_day {
                return false; // fell out of the querying device's QBF
            }
            self.uploads.iter().any(|u| {
                u.device == partner
                    && c.end_minute <= u.minute + 1
                    && u.minute <= query_minute
                    && query_minute - u.minute <= 21 * MINUTES_PER_DAY
                    && Minute(u.minute).day() <= reg_day + 20
                    && Minute(u.minute).day() + 20 >= query_day
            })
        })
    }
}

/// Run a scenario against a fresh in-process ledger.
pub fn run(scenario: Scenario) -> Result<MetricsReport, SimError> {
    let ledger = Ledger::new(scenario.ledger_config(), derive_rng_seed(scenario.seed));
    let backend = InProcessBackend::new(ledger);
    Simulation::new(scenario, backend)?.run_to_end()
}

fn derive_rng_seed(seed: u64) -> u64 {
    // ledger tokens come from their own stream; fold the label into a u64
    use rand::RngCore;
    derive_rng(seed, "ledger", 0).next_u64()
}
