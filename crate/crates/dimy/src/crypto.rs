//! Prime-order group abstraction behind the ephemeral identifiers.
//!
//! An EphID is a group element `g^x`; two devices that exchange EphIDs derive
//! the same encounter identifier from `g^{xy}`. Two instantiations are
//! provided:
//!
//! * **wire-faithful** — the multiplicative group modulo a fixed 128-bit safe
//!   prime, giving the protocol's 16-byte identifiers. A 128-bit discrete log
//!   offers no real security margin; this mode exists to reproduce the wire
//!   layout and is simulation-grade only.
//! * **hardened** — ristretto255, with 32-byte encodings. Frames grow beyond
//!   the legacy BLE advertisement budget, so this mode is only usable on the
//!   simulated channel.
//!
//! Element encodings are canonical (fixed-width big-endian for the modular
//! group, the ristretto compressed encoding otherwise), so equal elements
//! always have identical bytes and can feed hashes directly.

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::traits::Identity;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// 2^128 - 15449, the largest 128-bit safe prime; (p-1)/2 is prime.
const MODP128_PRIME_HEX: &str = "ffffffffffffffffffffffffffffc3a7";
/// (p-1)/2 — the prime order of the quadratic-residue subgroup.
const MODP128_ORDER_HEX: &str = "7fffffffffffffffffffffffffffe1d3";
/// g = 4 = 2^2 is a quadratic residue, hence has exact order (p-1)/2.
const MODP128_GENERATOR: u32 = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid group element")]
    InvalidElement,
    #[error("invalid group parameters: {0}")]
    InvalidParams(String),
    #[error("scalar out of range")]
    InvalidScalar,
}

/// Secret exponent. Never serialized by any protocol surface; `Debug` is
/// redacted so it cannot leak through logs or reports.
#[derive(Clone, PartialEq, Eq)]
pub struct Scalar(ScalarRepr);

#[derive(Clone, PartialEq, Eq)]
enum ScalarRepr {
    Modular(BigUint),
    Ristretto(curve25519_dalek::scalar::Scalar),
}

impl std::fmt::Debug for Scalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Scalar(<secret>)")
    }
}

impl Scalar {
    /// Raw scalar bytes (big-endian for the modular group, the ristretto
    /// canonical encoding otherwise). Exists so tests can plant sentinel
    /// values and scan artifacts for leaks.
    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.0 {
            ScalarRepr::Modular(v) => v.to_bytes_be(),
            ScalarRepr::Ristretto(s) => s.to_bytes().to_vec(),
        }
    }
}

/// Canonically encoded group element (an EphID or a raw DH output).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupElement {
    encoded: Vec<u8>,
}

impl GroupElement {
    pub fn as_bytes(&self) -> &[u8] {
        &self.encoded
    }
}

impl std::fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GroupElement({})", hex::encode(&self.encoded))
    }
}

/// Symmetric encounter identifier: SHA-256 of the canonical encoding of the
/// shared DH element. Both sides of a contact derive byte-identical digests.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncId([u8; 32]);

impl EncId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for EncId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EncId({})", hex::encode(self.0))
    }
}

/// Which shipped group a component should use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupMode {
    #[default]
    WireFaithful,
    Hardened,
}

impl GroupMode {
    pub fn params(self) -> GroupParams {
        match self {
            GroupMode::WireFaithful => GroupParams::wire_faithful(),
            GroupMode::Hardened => GroupParams::hardened(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum GroupKind {
    Modular { modulus: BigUint, generator: BigUint, order: BigUint, check_subgroup: bool },
    Ristretto,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    name: &'static str,
    element_len: usize,
    kind: GroupKind,
}

impl GroupParams {
    /// The default 16-byte group matching the protocol's wire sizes.
    pub fn wire_faithful() -> Self {
        GroupParams {
            name: "modp-128",
            element_len: 16,
            kind: GroupKind::Modular {
                modulus: BigUint::parse_bytes(MODP128_PRIME_HEX.as_bytes(), 16).unwrap(),
                generator: BigUint::from(MODP128_GENERATOR),
                order: BigUint::parse_bytes(MODP128_ORDER_HEX.as_bytes(), 16).unwrap(),
                check_subgroup: true,
            },
        }
    }

    /// ristretto255 with 32-byte encodings.
    pub fn hardened() -> Self {
        GroupParams { name: "ristretto255", element_len: 32, kind: GroupKind::Ristretto }
    }

    /// Custom modular group for tests and experiments. `order` must be the
    /// multiplicative order of `generator`; subgroup membership of peers is
    /// not enforced for custom groups.
    pub fn custom_modular(
        name: &'static str,
        modulus: u64,
        generator: u64,
        order: u64,
        element_len: usize,
    ) -> Result<Self, CryptoError> {
        if element_len != 16 && element_len != 32 {
            return Err(CryptoError::InvalidParams(format!(
                "element_len must be 16 or 32, got {element_len}"
            )));
        }
        if modulus < 5 || modulus.is_multiple_of(2) || generator < 2 || generator >= modulus || order < 2 {
            return Err(CryptoError::InvalidParams("degenerate modular group".into()));
        }
        let modulus = BigUint::from(modulus);
        let generator = BigUint::from(generator);
        let order_big = BigUint::from(order);
        if generator.modpow(&order_big, &modulus) != BigUint::one() {
            return Err(CryptoError::InvalidParams("generator order mismatch".into()));
        }
        if BigUint::from(2u32) << (element_len * 8 - 1) <= modulus {
            return Err(CryptoError::InvalidParams("modulus exceeds element_len".into()));
        }
        Ok(GroupParams {
            name,
            element_len,
            kind: GroupKind::Modular { modulus, generator, order: order_big, check_subgroup: false },
        })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn element_len(&self) -> usize {
        self.element_len
    }

    /// Draw a fresh keypair `(x, g^x)`. Rejection-samples the scalar until it
    /// falls in `[1, order-1]`, so it never fails; the element encodes to
    /// exactly `element_len` bytes.
    pub fn keygen<R: RngCore + ?Sized>(&self, rng: &mut R) -> (Scalar, GroupElement) {
        match &self.kind {
            GroupKind::Modular { modulus, generator, order, .. } => {
                let nbytes = (order.bits() as usize).div_ceil(8);
                let top_mask = match order.bits() as usize % 8 {
                    0 => 0xff,
                    b => (1u16 << b) as u8 - 1,
                };
                let mut buf = vec![0u8; nbytes];
                let x = loop {
                    rng.fill_bytes(&mut buf);
                    buf[0] &= top_mask;
                    let candidate = BigUint::from_bytes_be(&buf);
                    if !candidate.is_zero() && candidate < *order {
                        break candidate;
                    }
                };
                let elem = generator.modpow(&x, modulus);
                (Scalar(ScalarRepr::Modular(x)), self.encode_modular(&elem))
            }
            GroupKind::Ristretto => {
                let mut wide = [0u8; 64];
                let s = loop {
                    rng.fill_bytes(&mut wide);
                    let s = curve25519_dalek::scalar::Scalar::from_bytes_mod_order_wide(&wide);
                    if s != curve25519_dalek::scalar::Scalar::ZERO {
                        break s;
                    }
                };
                let point = RistrettoPoint::mul_base(&s);
                (
                    Scalar(ScalarRepr::Ristretto(s)),
                    GroupElement { encoded: point.compress().to_bytes().to_vec() },
                )
            }
        }
    }

    /// Scalar from a small integer, for fixed test vectors. Must lie in
    /// `[1, order-1]`.
    pub fn scalar_from_u64(&self, value: u64) -> Result<Scalar, CryptoError> {
        match &self.kind {
            GroupKind::Modular { order, .. } => {
                let v = BigUint::from(value);
                if v.is_zero() || v >= *order {
                    return Err(CryptoError::InvalidScalar);
                }
                Ok(Scalar(ScalarRepr::Modular(v)))
            }
            GroupKind::Ristretto => {
                if value == 0 {
                    return Err(CryptoError::InvalidScalar);
                }
                Ok(Scalar(ScalarRepr::Ristretto(curve25519_dalek::scalar::Scalar::from(value))))
            }
        }
    }

    /// Decode and validate an encoded element: canonical length, range, and
    /// (for the shipped prime-order groups) subgroup membership.
    pub fn decode(&self, bytes: &[u8]) -> Result<GroupElement, CryptoError> {
        if bytes.len() != self.element_len {
            return Err(CryptoError::InvalidElement);
        }
        match &self.kind {
            GroupKind::Modular { modulus, order, check_subgroup, .. } => {
                let v = BigUint::from_bytes_be(bytes);
                if v.is_zero() || v >= *modulus || v.is_one() {
                    return Err(CryptoError::InvalidElement);
                }
                if *check_subgroup && v.modpow(order, modulus) != BigUint::one() {
                    return Err(CryptoError::InvalidElement);
                }
                Ok(GroupElement { encoded: bytes.to_vec() })
            }
            GroupKind::Ristretto => {
                let compressed = CompressedRistretto::from_slice(bytes)
                    .map_err(|_| CryptoError::InvalidElement)?;
                let point = compressed.decompress().ok_or(CryptoError::InvalidElement)?;
                if point == RistrettoPoint::identity() {
                    return Err(CryptoError::InvalidElement);
                }
                // re-encode to guarantee canonicality
                Ok(GroupElement { encoded: point.compress().to_bytes().to_vec() })
            }
        }
    }

    /// `peer^secret` — the raw Diffie-Hellman operation.
    pub fn dh(&self, secret: &Scalar, peer: &GroupElement) -> Result<GroupElement, CryptoError> {
        let peer = self.decode(&peer.encoded)?;
        match (&self.kind, &secret.0) {
            (GroupKind::Modular { modulus, .. }, ScalarRepr::Modular(x)) => {
                let base = BigUint::from_bytes_be(&peer.encoded);
                Ok(self.encode_modular(&base.modpow(x, modulus)))
            }
            (GroupKind::Ristretto, ScalarRepr::Ristretto(s)) => {
                let compressed = CompressedRistretto::from_slice(&peer.encoded)
                    .map_err(|_| CryptoError::InvalidElement)?;
                let point = compressed.decompress().ok_or(CryptoError::InvalidElement)?;
                Ok(GroupElement { encoded: (point * s).compress().to_bytes().to_vec() })
            }
            _ => Err(CryptoError::InvalidScalar),
        }
    }

    /// The encounter identifier: SHA-256 over the canonical encoding of the
    /// shared element. `derive_encid(x, g^y) == derive_encid(y, g^x)`.
    pub fn derive_encid(&self, secret: &Scalar, peer_ephid: &GroupElement) -> Result<EncId, CryptoError> {
        let shared = self.dh(secret, peer_ephid)?;
        let digest = Sha256::digest(&shared.encoded);
        Ok(EncId(digest.into()))
    }

    fn encode_modular(&self, value: &BigUint) -> GroupElement {
        let mut encoded = vec![0u8; self.element_len];
        let raw = value.to_bytes_be();
        encoded[self.element_len - raw.len()..].copy_from_slice(&raw);
        GroupElement { encoded }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> GroupParams {
        // p=23, g=5 has order 22
        GroupParams::custom_modular("toy-23", 23, 5, 22, 16).unwrap()
    }

    fn encode16(v: u64) -> Vec<u8> {
        let mut out = vec![0u8; 16];
        out[8..].copy_from_slice(&v.to_be_bytes());
        out
    }

    #[test]
    fn toy_group_fixed_exponents() {
        let g = toy();
        // 5^4 mod 23 = 4 and 5^3 mod 23 = 10, by hand
        let x4 = g.scalar_from_u64(4).unwrap();
        let x3 = g.scalar_from_u64(3).unwrap();
        let gen = g.decode(&encode16(5)).unwrap();
        assert_eq!(g.dh(&x4, &gen).unwrap().as_bytes(), encode16(4).as_slice());
        assert_eq!(g.dh(&x3, &gen).unwrap().as_bytes(), encode16(10).as_slice());
        // dh(3, 4) = 4^3 mod 23 = 18
        let four = g.decode(&encode16(4)).unwrap();
        assert_eq!(g.dh(&x3, &four).unwrap().as_bytes(), encode16(18).as_slice());
    }

    #[test]
    fn toy_encid_golden() {
        // SHA-256 of 18 zero-padded to 16 bytes, frozen from the oracle.
        let g = toy();
        let x4 = g.scalar_from_u64(4).unwrap();
        let x3 = g.scalar_from_u64(3).unwrap();
        let ephid_a = g.dh(&x4, &g.decode(&encode16(5)).unwrap()).unwrap();
        let ephid_b = g.dh(&x3, &g.decode(&encode16(5)).unwrap()).unwrap();
        let enc_ab = g.derive_encid(&x4, &ephid_b).unwrap();
        let enc_ba = g.derive_encid(&x3, &ephid_a).unwrap();
        assert_eq!(enc_ab, enc_ba);
        assert_eq!(
            hex::encode(enc_ab.as_bytes()),
            "c5f8843b733d968b612c38d7ecada8eced3c7b88bcbd8b6ef373e927915ef41e"
        );
    }

    #[test]
    fn wire_faithful_golden_vectors() {
        // g=4: g^2 = 16, g^3 = 64, g^6 = 4096; frozen from the oracle.
        let g = GroupParams::wire_faithful();
        let x2 = g.scalar_from_u64(2).unwrap();
        let x3 = g.scalar_from_u64(3).unwrap();
        let g2 = g.decode(&encode16(16)).unwrap();
        let g3 = g.decode(&encode16(64)).unwrap();
        assert_eq!(g.dh(&x2, &g3).unwrap().as_bytes(), encode16(4096).as_slice());
        assert_eq!(g.dh(&x3, &g2).unwrap().as_bytes(), encode16(4096).as_slice());
        assert_eq!(
            hex::encode(g.derive_encid(&x2, &g3).unwrap().as_bytes()),
            "e408702c0e342b7628839176f3d447341be2ee5755d3ce5ad7172df942082952"
        );
    }

    #[test]
    fn keygen_is_deterministic_under_seed() {
        for params in [GroupParams::wire_faithful(), GroupParams::hardened(), toy()] {
            let (s1, e1) = params.keygen(&mut ChaCha20Rng::seed_from_u64(99));
            let (s2, e2) = params.keygen(&mut ChaCha20Rng::seed_from_u64(99));
            let (s3, e3) = params.keygen(&mut ChaCha20Rng::seed_from_u64(100));
            assert_eq!(s1.to_bytes(), s2.to_bytes());
            assert_eq!(e1, e2);
            assert!(s1.to_bytes() != s3.to_bytes() || e1 != e3);
            assert_eq!(e1.as_bytes().len(), params.element_len());
        }
    }

    #[test]
    fn dh_symmetry_random_scalars() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for params in [GroupParams::wire_faithful(), GroupParams::hardened()] {
            for _ in 0..16 {
                let (x, gx) = params.keygen(&mut rng);
                let (y, gy) = params.keygen(&mut rng);
                assert_eq!(params.dh(&x, &gy).unwrap(), params.dh(&y, &gx).unwrap());
                assert_eq!(
                    params.derive_encid(&x, &gy).unwrap(),
                    params.derive_encid(&y, &gx).unwrap()
                );
            }
        }
    }

    #[test]
    fn identity_exponent_is_noop() {
        let params = GroupParams::wire_faithful();
        let (_, e) = params.keygen(&mut ChaCha20Rng::seed_from_u64(5));
        let one = params.scalar_from_u64(1).unwrap();
        assert_eq!(params.dh(&one, &e).unwrap(), e);
    }

    #[test]
    fn distinct_peers_distinct_encids() {
        let params = GroupParams::wire_faithful();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let (x, _) = params.keygen(&mut rng);
        let (_, e1) = params.keygen(&mut rng);
        let (_, e2) = params.keygen(&mut rng);
        assert_ne!(
            params.derive_encid(&x, &e1).unwrap(),
            params.derive_encid(&x, &e2).unwrap()
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for params in [GroupParams::wire_faithful(), GroupParams::hardened()] {
            for _ in 0..32 {
                let (_, e) = params.keygen(&mut rng);
                let decoded = params.decode(e.as_bytes()).unwrap();
                assert_eq!(decoded, e);
            }
        }
    }

    #[test]
    fn invalid_elements_rejected() {
        let params = GroupParams::wire_faithful();
        // wrong length
        assert_eq!(params.decode(&[1u8; 15]), Err(CryptoError::InvalidElement));
        // zero and one are not valid peers
        assert_eq!(params.decode(&[0u8; 16]), Err(CryptoError::InvalidElement));
        assert_eq!(params.decode(&encode16(1)), Err(CryptoError::InvalidElement));
        // 5 is not a quadratic residue mod p, so it fails the subgroup check
        assert_eq!(params.decode(&encode16(5)), Err(CryptoError::InvalidElement));
        // 2 is a residue (p = 7 mod 8) and decodes fine
        assert!(params.decode(&encode16(2)).is_ok());
        // value >= modulus
        assert_eq!(params.decode(&[0xffu8; 16]), Err(CryptoError::InvalidElement));

        let hardened = GroupParams::hardened();
        assert_eq!(hardened.decode(&[0xffu8; 32]), Err(CryptoError::InvalidElement));
        assert_eq!(hardened.decode(&[0u8; 32]), Err(CryptoError::InvalidElement));
    }

    #[test]
    fn scalar_debug_is_redacted() {
        let params = GroupParams::wire_faithful();
        let (s, _) = params.keygen(&mut ChaCha20Rng::seed_from_u64(1));
        assert_eq!(format!("{s:?}"), "Scalar(<secret>)");
    }
}
