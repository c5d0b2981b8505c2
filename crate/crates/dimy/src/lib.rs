//! "Did I Meet You" — privacy-preserving contact tracing.
//!
//! Devices derive symmetric encounter identifiers via Diffie-Hellman over
//! broadcast-only BLE-style advertisements: each 30-minute ephemeral ID is
//! split 15-out-of-30 with Shamir secret sharing and leaked one share per
//! minute, so only peers that stay in range for a quarter hour can
//! reconstruct it. Encounters live in daily Bloom filters; diagnosed users
//! upload the 21-day union under a health-authority token, and anyone can ask
//! the ledger — and learn exactly one boolean — whether their own filter
//! intersects an upload.
//!
//! The crate ships the full device state machine, the filter algebra and wire
//! formats, a desk-scale ledger with the HTTP API, and a deterministic
//! simulator (`dimy` binary) that reproduces the protocol's false-positive
//! figures and attack behaviour.

pub mod backend;
pub mod ble;
pub mod bloom;
pub mod crypto;
pub mod device;
pub mod sim;
pub mod sss;
pub mod time;

pub use bloom::{BloomFilter, BloomParams, FilterRole};
pub use crypto::{EncId, GroupElement, GroupMode, GroupParams, Scalar};
pub use device::{Device, DeviceConfig};
