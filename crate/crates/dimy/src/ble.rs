//! Simulated BLE advertisement frames.
//!
//! One frame carries a single secret share of an EphID plus a 3-byte
//! truncated hash of that EphID, under a rotating random device address:
//!
//! ```text
//! mac(6) || eph_hash(3) || share_index(1) || share_payload(element_len)
//! ```
//!
//! With 16-byte elements the payload after the MAC is 20 bytes, inside the
//! 31-byte budget of a legacy non-connectable advertisement. The 32-byte
//! hardened mode overflows that budget and is only allowed on the simulated
//! channel (a warning is logged once).

use crate::crypto::GroupElement;
use crate::sss::Share;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAC_LEN: usize = 6;
pub const EPH_HASH_LEN: usize = 3;
/// mac + eph_hash + share_index
pub const FRAME_OVERHEAD: usize = MAC_LEN + EPH_HASH_LEN + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("share payload must be 16 or 32 bytes, got {0}")]
    FieldLength(usize),
    #[error("frame must be {expected} bytes for this element length, got {got}")]
    BadLength { expected: usize, got: usize },
}

/// A decoded advertisement frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Advertisement {
    pub mac: [u8; MAC_LEN],
    pub eph_hash: [u8; EPH_HASH_LEN],
    pub share: Share,
}

/// First 3 bytes of SHA-256 over the canonical EphID encoding; receivers use
/// it to group shares belonging to the same EphID and to verify a
/// reconstruction.
pub fn truncated_ephid_hash(ephid: &GroupElement) -> [u8; EPH_HASH_LEN] {
    truncated_hash(ephid.as_bytes())
}

pub fn truncated_hash(encoded: &[u8]) -> [u8; EPH_HASH_LEN] {
    let digest = Sha256::digest(encoded);
    [digest[0], digest[1], digest[2]]
}

pub fn encode(adv: &Advertisement) -> Result<Vec<u8>, CodecError> {
    let len = adv.share.payload.len();
    if len != 16 && len != 32 {
        return Err(CodecError::FieldLength(len));
    }
    if len == 32 {
        warn_hardened_frame_once();
    }
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + len);
    out.extend_from_slice(&adv.mac);
    out.extend_from_slice(&adv.eph_hash);
    out.push(adv.share.index);
    out.extend_from_slice(&adv.share.payload);
    Ok(out)
}

pub fn decode(bytes: &[u8], element_len: usize) -> Result<Advertisement, CodecError> {
    let expected = FRAME_OVERHEAD + element_len;
    if bytes.len() != expected {
        return Err(CodecError::BadLength { expected, got: bytes.len() });
    }
    Ok(Advertisement {
        mac: bytes[0..MAC_LEN].try_into().unwrap(),
        eph_hash: bytes[MAC_LEN..MAC_LEN + EPH_HASH_LEN].try_into().unwrap(),
        share: Share {
            index: bytes[MAC_LEN + EPH_HASH_LEN],
            payload: bytes[FRAME_OVERHEAD..].to_vec(),
        },
    })
}

fn warn_hardened_frame_once() {
    use std::sync::Once;
    static WARNED: Once = Once::new();
    WARNED.call_once(|| {
        log::warn!(
            "42-byte hardened advertisements exceed the 31-byte legacy BLE budget; \
             simulated channel only"
        );
    });
}
