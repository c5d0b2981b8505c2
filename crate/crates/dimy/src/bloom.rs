//! Fixed-size Bloom filter backing the DBF/CBF/QBF roles: deterministic
//! double hashing from SHA-256, bitwise union/intersection, the closed-form
//! false-positive estimate, and the bit-exact "DIMB" serialization used on
//! every wire and disk surface.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DIMB_MAGIC: [u8; 4] = *b"DIMB";
pub const DIMB_VERSION: u8 = 0x01;
/// Header: magic(4) || version(1) || m as u32 BE (4) || k(1) || role(1).
pub const DIMB_HEADER_LEN: usize = 11;

/// Filter geometry: `m` bits, `k` hash functions. The protocol default is
/// 800,000 bits (100 decimal kilobytes) with 3 hashes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloomParams {
    pub bits: u32,
    pub hashes: u8,
}

impl BloomParams {
    pub const DEFAULT: BloomParams = BloomParams { bits: 800_000, hashes: 3 };

    pub fn new(bits: u32, hashes: u8) -> Result<Self, BloomError> {
        if bits == 0 || hashes == 0 {
            return Err(BloomError::InvalidParams { bits, hashes });
        }
        Ok(BloomParams { bits, hashes })
    }

    pub fn body_len(&self) -> usize {
        (self.bits as usize).div_ceil(8)
    }

    pub fn serialized_len(&self) -> usize {
        DIMB_HEADER_LEN + self.body_len()
    }
}

impl Default for BloomParams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Advisory role tag carried in the header; it does not change behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterRole {
    Daily = 0x01,
    Contact = 0x02,
    Query = 0x03,
}

impl FilterRole {
    fn from_byte(b: u8) -> Result<Self, BloomError> {
        match b {
            0x01 => Ok(FilterRole::Daily),
            0x02 => Ok(FilterRole::Contact),
            0x03 => Ok(FilterRole::Query),
            other => Err(BloomError::BadRole(other)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BloomError {
    #[error("invalid params: m={bits} k={hashes}")]
    InvalidParams { bits: u32, hashes: u8 },
    #[error("filter params mismatch")]
    ParamsMismatch,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown role byte {0:#04x}")]
    BadRole(u8),
    #[error("serialized length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Clone, PartialEq, Eq)]
pub struct BloomFilter {
    params: BloomParams,
    role: FilterRole,
    bits: Vec<u8>,
}

impl std::fmt::Debug for BloomFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BloomFilter")
            .field("params", &self.params)
            .field("role", &self.role)
            .field("popcount", &self.popcount())
            .finish()
    }
}

/// The k bit indices for `item`: double hashing `(h1 + i*h2) mod m` with
/// h1/h2 the first 8 bytes (big-endian) of SHA-256(0x00 || item) and
/// SHA-256(0x01 || item). Stable across platforms and implementations.
pub fn positions(item: &[u8], params: &BloomParams) -> Vec<u64> {
    assert!(!item.is_empty(), "bloom items must be non-empty");
    let h1 = prefixed_hash64(0x00, item);
    let h2 = prefixed_hash64(0x01, item);
    let m = params.bits as u128;
    (0..params.hashes)
        .map(|i| ((h1 as u128 + i as u128 * h2 as u128) % m) as u64)
        .collect()
}

fn prefixed_hash64(prefix: u8, item: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update([prefix]);
    hasher.update(item);
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

/// Closed-form false-positive estimate `(1 - e^{-kn/m})^k` for a filter of
/// these params holding `n` items.
pub fn fpr_estimate(params: &BloomParams, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let m = params.bits as f64;
    let k = params.hashes as f64;
    (1.0 - (-k * n as f64 / m).exp()).powf(k)
}

impl BloomFilter {
    pub fn new(params: BloomParams, role: FilterRole) -> Self {
        let body = params.body_len();
        BloomFilter { params, role, bits: vec![0u8; body] }
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn role(&self) -> FilterRole {
        self.role
    }

    pub fn with_role(mut self, role: FilterRole) -> Self {
        self.role = role;
        self
    }

    pub fn insert(&mut self, item: &[u8]) {
        for pos in positions(item, &self.params) {
            self.bits[(pos / 8) as usize] |= 1 << (pos % 8);
        }
    }

    pub fn contains(&self, item: &[u8]) -> bool {
        positions(item, &self.params)
            .iter()
            .all(|&pos| self.bits[(pos / 8) as usize] & (1 << (pos % 8)) != 0)
    }

    pub fn popcount(&self) -> u64 {
        let (words, tail) = self.bits.split_at(self.bits.len() & !7);
        let full: u64 = words
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()).count_ones() as u64)
            .sum();
        full + tail.iter().map(|b| b.count_ones() as u64).sum::<u64>()
    }

    pub fn fill_ratio(&self) -> f64 {
        self.popcount() as f64 / self.params.bits as f64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Bitwise-OR `other` into `self`.
    pub fn union_in_place(&mut self, other: &BloomFilter) -> Result<(), BloomError> {
        if self.params != other.params {
            return Err(BloomError::ParamsMismatch);
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn union(a: &BloomFilter, b: &BloomFilter) -> Result<BloomFilter, BloomError> {
        let mut out = a.clone();
        out.union_in_place(b)?;
        Ok(out)
    }

    /// Number of set bits in the bitwise AND of the two filters; inputs are
    /// untouched. This is the `t` of the intersection FPR bound `(t/m)^k`.
    pub fn intersect_popcount(a: &BloomFilter, b: &BloomFilter) -> Result<u64, BloomError> {
        if a.params != b.params {
            return Err(BloomError::ParamsMismatch);
        }
        let split = a.bits.len() & !7;
        let full: u64 = a.bits[..split]
            .chunks_exact(8)
            .zip(b.bits[..split].chunks_exact(8))
            .map(|(x, y)| {
                let x = u64::from_le_bytes(x.try_into().unwrap());
                let y = u64::from_le_bytes(y.try_into().unwrap());
                (x & y).count_ones() as u64
            })
            .sum();
        let tail: u64 = a.bits[split..]
            .iter()
            .zip(&b.bits[split..])
            .map(|(x, y)| (x & y).count_ones() as u64)
            .sum();
        Ok(full + tail)
    }

    /// Serialize to the DIMB format. Constant size for fixed params: bit j
    /// lives at byte j/8, bit j%8 (LSB-first within the byte).
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.serialized_len());
        out.extend_from_slice(&DIMB_MAGIC);
        out.push(DIMB_VERSION);
        out.extend_from_slice(&self.params.bits.to_be_bytes());
        out.push(self.params.hashes);
        out.push(self.role as u8);
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<BloomFilter, BloomError> {
        if bytes.len() < DIMB_HEADER_LEN {
            return Err(BloomError::LengthMismatch { expected: DIMB_HEADER_LEN, got: bytes.len() });
        }
        if bytes[0..4] != DIMB_MAGIC {
            return Err(BloomError::BadMagic);
        }
        if bytes[4] != DIMB_VERSION {
            return Err(BloomError::BadVersion(bytes[4]));
        }
        let bits = u32::from_be_bytes(bytes[5..9].try_into().unwrap());
        let hashes = bytes[9];
        let role = FilterRole::from_byte(bytes[10])?;
        let params = BloomParams::new(bits, hashes)
            .map_err(|_| BloomError::InvalidParams { bits, hashes })?;
        let expected = params.serialized_len();
        if bytes.len() != expected {
            return Err(BloomError::LengthMismatch { expected, got: bytes.len() });
        }
        Ok(BloomFilter { params, role, bits: bytes[DIMB_HEADER_LEN..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn small() -> BloomParams {
        BloomParams::new(64, 3).unwrap()
    }

    #[test]
    fn positions_golden_values() {
        // Frozen from an independent SHA-256 oracle (Python hashlib).
        assert_eq!(positions(&[0u8; 32], &BloomParams::DEFAULT), vec![519_370, 695_950, 72_530]);
        let one = BloomParams::new(800_000, 1).unwrap();
        assert_eq!(positions(&[0u8; 32], &one), vec![519_370]);
        assert_eq!(positions(b"alpha", &small()), vec![56, 16, 40]);
        assert_eq!(positions(b"beta", &small()), vec![50, 48, 46]);
    }

    #[test]
    fn positions_deterministic() {
        let item = b"some item";
        assert_eq!(positions(item, &BloomParams::DEFAULT), positions(item, &BloomParams::DEFAULT));
    }

    #[test]
    fn insert_contains_no_false_negatives() {
        let mut f = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Daily);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut items = Vec::new();
        for _ in 0..500 {
            let mut item = [0u8; 32];
            rng.fill_bytes(&mut item);
            f.insert(&item);
            items.push(item);
        }
        assert!(items.iter().all(|i| f.contains(i)));
    }

    #[test]
    fn empty_filter_contains_nothing() {
        let f = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Daily);
        assert!(!f.contains(b"anything"));
        assert_eq!(f.popcount(), 0);
    }

    #[test]
    fn insert_idempotent_and_bounded() {
        let mut f = BloomFilter::new(small(), FilterRole::Daily);
        f.insert(b"alpha");
        let once = f.clone();
        let pop = f.popcount();
        assert!(pop <= 3);
        f.insert(b"alpha");
        assert_eq!(f, once);
    }

    #[test]
    fn union_algebra() {
        let mut a = BloomFilter::new(small(), FilterRole::Daily);
        let mut b = BloomFilter::new(small(), FilterRole::Daily);
        let empty = BloomFilter::new(small(), FilterRole::Daily);
        a.insert(b"alpha");
        b.insert(b"beta");

        let ab = BloomFilter::union(&a, &b).unwrap();
        let ba = BloomFilter::union(&b, &a).unwrap();
        assert_eq!(ab.bits, ba.bits);
        assert!(ab.contains(b"alpha") && ab.contains(b"beta"));
        assert_eq!(BloomFilter::union(&a, &empty).unwrap().bits, a.bits);

        let other = BloomFilter::new(BloomParams::new(128, 3).unwrap(), FilterRole::Daily);
        assert_eq!(BloomFilter::union(&a, &other), Err(BloomError::ParamsMismatch));
    }

    #[test]
    fn intersect_popcount_bounds() {
        let mut a = BloomFilter::new(small(), FilterRole::Contact);
        let mut b = BloomFilter::new(small(), FilterRole::Query);
        let empty = BloomFilter::new(small(), FilterRole::Query);
        a.insert(b"shared");
        a.insert(b"only-a");
        b.insert(b"shared");

        assert_eq!(BloomFilter::intersect_popcount(&a, &a).unwrap(), a.popcount());
        assert_eq!(BloomFilter::intersect_popcount(&a, &empty).unwrap(), 0);
        let t = BloomFilter::intersect_popcount(&a, &b).unwrap();
        let shared_bits = positions(b"shared", &small())
            .iter()
            .collect::<std::collections::HashSet<_>>()
            .len() as u64;
        assert!(t >= shared_bits);
        assert!(t <= a.popcount().min(b.popcount()));
    }

    #[test]
    fn union_of_21_filters_equals_one_filter_of_all_items() {
        // 21 daily filters of 1000 items each vs a single filter holding the
        // 21000-item union: positions are deterministic per item, so the
        // bitsets must be identical, not merely query-equivalent.
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut combined = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Contact);
        let mut all_at_once = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Contact);
        let mut sample = Vec::new();
        for day in 0..21 {
            let mut daily = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Daily);
            for i in 0..1000u32 {
                let mut item = [0u8; 32];
                rng.fill_bytes(&mut item);
                daily.insert(&item);
                all_at_once.insert(&item);
                if i == 0 {
                    sample.push(item);
                }
            }
            combined.union_in_place(&daily).unwrap();
            let _ = day;
        }
        assert_eq!(combined.serialize(), all_at_once.serialize());
        assert!(sample.iter().all(|item| combined.contains(item)));
    }

    #[test]
    fn fpr_estimate_at_sizing_points() {
        let p = BloomParams::DEFAULT;
        let dbf = fpr_estimate(&p, 1_000);
        let cbf = fpr_estimate(&p, 21_000);
        assert!((dbf - 5.243866903011e-8).abs() < 1e-12);
        assert!((cbf - 4.342974679728e-4).abs() < 1e-9);
        // the quoted "1 in 19 Million" / "1 in 2303"
        assert!((1.0 / dbf - 19.07e6).abs() < 0.05e6);
        assert!((1.0 / cbf - 2303.0).abs() < 1.0);
        assert_eq!(fpr_estimate(&p, 0), 0.0);
    }

    #[test]
    fn serialization_golden_file() {
        // Frozen from the oracle: m=64, k=3, role Daily, items {alpha, beta}.
        let mut f = BloomFilter::new(small(), FilterRole::Daily);
        f.insert(b"alpha");
        f.insert(b"beta");
        let bytes = f.serialize();
        assert_eq!(hex::encode(&bytes), "44494d42010000004003010000010000410501");
        assert_eq!(BloomFilter::deserialize(&bytes).unwrap(), f);
    }

    #[test]
    fn serialized_size_constant() {
        let f = BloomFilter::new(BloomParams::DEFAULT, FilterRole::Contact);
        assert_eq!(f.serialize().len(), 11 + 100_000);
        let mut g = f.clone();
        for i in 0..100u32 {
            g.insert(&i.to_be_bytes());
        }
        assert_eq!(g.serialize().len(), 11 + 100_000);
    }

    #[test]
    fn deserialize_rejects_tampering() {
        let f = BloomFilter::new(small(), FilterRole::Daily);
        let good = f.serialize();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert_eq!(BloomFilter::deserialize(&bad_magic), Err(BloomError::BadMagic));

        let mut bad_version = good.clone();
        bad_version[4] = 0x02;
        assert_eq!(BloomFilter::deserialize(&bad_version), Err(BloomError::BadVersion(0x02)));

        let mut truncated = good.clone();
        truncated.pop();
        assert!(matches!(
            BloomFilter::deserialize(&truncated),
            Err(BloomError::LengthMismatch { .. })
        ));

        let mut bad_role = good;
        bad_role[10] = 0x7f;
        assert_eq!(BloomFilter::deserialize(&bad_role), Err(BloomError::BadRole(0x7f)));
    }

    #[test]
    fn lsb_first_bit_packing() {
        let mut f = BloomFilter::new(BloomParams::new(16, 1).unwrap(), FilterRole::Daily);
        // find an item whose single position is known, then check the byte
        let item = b"alpha";
        let pos = positions(item, f.params())[0];
        f.insert(item);
        let body = &f.serialize()[DIMB_HEADER_LEN..];
        assert_eq!(body[(pos / 8) as usize], 1 << (pos % 8));
    }
}
