//! C ABI over the device-side protocol: the device state machine, the
//! Bloom-filter algebra, and the DIMB wire format, behind opaque handles and
//! integer status codes so that mobile or embedded hosts can bind without
//! touching Rust types.
//!
//! Conventions: every function that can fail returns [`DimyStatus`];
//! out-parameters are written only on `DIMY_STATUS_OK` (or
//! `DIMY_STATUS_ENCOUNTER_REGISTERED` where noted). Pointer arguments must
//! be valid for the stated lengths and handles must come from this library.
//! Buffers handed out by the library must be released with
//! [`dimy_buffer_free`], handles with their `_free` function. Handles are
//! not thread-safe; guard them with one lock per handle if shared.

#![allow(clippy::missing_safety_doc)]

use dimy::ble;
use dimy::bloom::{BloomFilter, BloomParams, FilterRole};
use dimy::crypto::GroupMode;
use dimy::device::{Device, DeviceConfig};
use dimy::time::Minute;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::os::raw::c_char;

/// Status codes returned by every fallible call.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DimyStatus {
    /// Success.
    Ok = 0,
    /// Success, and this advertisement completed an encounter registration.
    EncounterRegistered = 1,
    /// A required pointer argument was null.
    NullPointer = -1,
    /// An argument was out of range or malformed.
    InvalidArgument = -2,
    /// `tick` was called with a non-increasing minute.
    ClockRegression = -3,
    /// The device has no daily filters yet.
    NoData = -4,
    /// Bytes failed to parse as a filter or frame.
    DecodeError = -5,
}

/// Opaque device handle.
pub struct DimyDevice {
    inner: Device,
}

/// Opaque Bloom-filter handle.
pub struct DimyBloomFilter {
    inner: BloomFilter,
}

/// A heap buffer owned by the library; release with `dimy_buffer_free`.
#[repr(C)]
pub struct DimyBuffer {
    pub ptr: *mut u8,
    pub len: usize,
}

impl DimyBuffer {
    fn from_vec(v: Vec<u8>) -> DimyBuffer {
        let mut boxed = v.into_boxed_slice();
        let buf = DimyBuffer { ptr: boxed.as_mut_ptr(), len: boxed.len() };
        std::mem::forget(boxed);
        buf
    }

    #[cfg(test)]
    fn empty() -> DimyBuffer {
        DimyBuffer { ptr: std::ptr::null_mut(), len: 0 }
    }
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn dimy_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a buffer returned by this library. Null/empty buffers are fine.
#[no_mangle]
pub unsafe extern "C" fn dimy_buffer_free(buf: DimyBuffer) {
    if !buf.ptr.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(buf.ptr, buf.len)));
    }
}

// ---------------------------------------------------------------- device

/// Create a device. `group_mode`: 0 = wire-faithful 16-byte IDs (default),
/// 1 = hardened 32-byte IDs. `seed` drives all of the device's randomness;
/// real deployments must pass entropy, simulations pass a fixed seed.
#[no_mangle]
pub unsafe extern "C" fn dimy_device_new(
    group_mode: u32,
    seed: u64,
    start_minute: u64,
    dual_slot: bool,
    out: *mut *mut DimyDevice,
) -> DimyStatus {
    if out.is_null() {
        return DimyStatus::NullPointer;
    }
    let mode = match group_mode {
        0 => GroupMode::WireFaithful,
        1 => GroupMode::Hardened,
        _ => return DimyStatus::InvalidArgument,
    };
    let mut config = DeviceConfig::new(mode.params());
    config.dual_slot = dual_slot;
    let device = Device::new(config, ChaCha20Rng::seed_from_u64(seed), Minute(start_minute));
    *out = Box::into_raw(Box::new(DimyDevice { inner: device }));
    DimyStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn dimy_device_free(device: *mut DimyDevice) {
    if !device.is_null() {
        drop(Box::from_raw(device));
    }
}

/// Size in bytes of one advertisement frame for this device's group mode.
#[no_mangle]
pub unsafe extern "C" fn dimy_device_frame_len(device: *const DimyDevice) -> usize {
    if device.is_null() {
        return 0;
    }
    ble::FRAME_OVERHEAD + (*device).inner.config().group.element_len()
}

/// Advance the device to `minute` and collect the frames to broadcast.
/// `out_frames` receives the concatenated fixed-size frames (see
/// `dimy_device_frame_len`); the count is `len / frame_len`.
#[no_mangle]
pub unsafe extern "C" fn dimy_device_tick(
    device: *mut DimyDevice,
    minute: u64,
    out_frames: *mut DimyBuffer,
) -> DimyStatus {
    if device.is_null() || out_frames.is_null() {
        return DimyStatus::NullPointer;
    }
    match (*device).inner.tick(Minute(minute)) {
        Ok(adverts) => {
            let mut bytes = Vec::new();
            for adv in &adverts {
                match ble::encode(adv) {
                    Ok(frame) => bytes.extend_from_slice(&frame),
                    Err(_) => return DimyStatus::InvalidArgument,
                }
            }
            *out_frames = DimyBuffer::from_vec(bytes);
            DimyStatus::Ok
        }
        Err(_) => DimyStatus::ClockRegression,
    }
}

/// Feed one received frame. Returns `ENCOUNTER_REGISTERED` when this frame
/// completed a reconstruction (hostile or malformed frames are silently
/// absorbed, per protocol).
#[no_mangle]
pub unsafe extern "C" fn dimy_device_receive(
    device: *mut DimyDevice,
    frame: *const u8,
    frame_len: usize,
    minute: u64,
) -> DimyStatus {
    if device.is_null() || frame.is_null() {
        return DimyStatus::NullPointer;
    }
    let dev = &mut (*device).inner;
    let bytes = std::slice::from_raw_parts(frame, frame_len);
    let Ok(adv) = ble::decode(bytes, dev.config().group.element_len()) else {
        return DimyStatus::DecodeError;
    };
    match dev.receive(&adv, Minute(minute)) {
        Some(_) => DimyStatus::EncounterRegistered,
        None => DimyStatus::Ok,
    }
}

/// Union of the retained daily filters, tagged for upload.
#[no_mangle]
pub unsafe extern "C" fn dimy_device_build_cbf(
    device: *const DimyDevice,
    out: *mut *mut DimyBloomFilter,
) -> DimyStatus {
    if device.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    match (*device).inner.build_cbf() {
        Ok(filter) => {
            *out = Box::into_raw(Box::new(DimyBloomFilter { inner: filter }));
            DimyStatus::Ok
        }
        Err(_) => DimyStatus::NoData,
    }
}

/// Union of the retained daily filters for querying, plus the day index of
/// the oldest one (T_old).
#[no_mangle]
pub unsafe extern "C" fn dimy_device_build_qbf(
    device: *const DimyDevice,
    out: *mut *mut DimyBloomFilter,
    out_oldest_day: *mut u64,
) -> DimyStatus {
    if device.is_null() || out.is_null() || out_oldest_day.is_null() {
        return DimyStatus::NullPointer;
    }
    match (*device).inner.build_qbf() {
        Ok((filter, day)) => {
            *out = Box::into_raw(Box::new(DimyBloomFilter { inner: filter }));
            *out_oldest_day = day;
            DimyStatus::Ok
        }
        Err(_) => DimyStatus::NoData,
    }
}

/// Complete byte dump of retained device state (used by ephemerality
/// audits).
#[no_mangle]
pub unsafe extern "C" fn dimy_device_snapshot(
    device: *const DimyDevice,
    out: *mut DimyBuffer,
) -> DimyStatus {
    if device.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    *out = DimyBuffer::from_vec((*device).inner.snapshot());
    DimyStatus::Ok
}

// ---------------------------------------------------------------- bloom

/// Create an empty filter. `role`: 1 = daily, 2 = contact (upload),
/// 3 = query. Pass `bits = 800000, hashes = 3` for the protocol default.
#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_new(
    bits: u32,
    hashes: u8,
    role: u8,
    out: *mut *mut DimyBloomFilter,
) -> DimyStatus {
    if out.is_null() {
        return DimyStatus::NullPointer;
    }
    let role = match role {
        1 => FilterRole::Daily,
        2 => FilterRole::Contact,
        3 => FilterRole::Query,
        _ => return DimyStatus::InvalidArgument,
    };
    let Ok(params) = BloomParams::new(bits, hashes) else {
        return DimyStatus::InvalidArgument;
    };
    *out = Box::into_raw(Box::new(DimyBloomFilter { inner: BloomFilter::new(params, role) }));
    DimyStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_free(filter: *mut DimyBloomFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_insert(
    filter: *mut DimyBloomFilter,
    item: *const u8,
    item_len: usize,
) -> DimyStatus {
    if filter.is_null() || item.is_null() {
        return DimyStatus::NullPointer;
    }
    if item_len == 0 {
        return DimyStatus::InvalidArgument;
    }
    (*filter).inner.insert(std::slice::from_raw_parts(item, item_len));
    DimyStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_contains(
    filter: *const DimyBloomFilter,
    item: *const u8,
    item_len: usize,
    out: *mut bool,
) -> DimyStatus {
    if filter.is_null() || item.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    if item_len == 0 {
        return DimyStatus::InvalidArgument;
    }
    *out = (*filter).inner.contains(std::slice::from_raw_parts(item, item_len));
    DimyStatus::Ok
}

/// Bitwise-OR `src` into `dst`; params must match.
#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_union_in_place(
    dst: *mut DimyBloomFilter,
    src: *const DimyBloomFilter,
) -> DimyStatus {
    if dst.is_null() || src.is_null() {
        return DimyStatus::NullPointer;
    }
    match (*dst).inner.union_in_place(&(*src).inner) {
        Ok(()) => DimyStatus::Ok,
        Err(_) => DimyStatus::InvalidArgument,
    }
}

/// Popcount of the bitwise AND; params must match.
#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_intersect_popcount(
    a: *const DimyBloomFilter,
    b: *const DimyBloomFilter,
    out: *mut u64,
) -> DimyStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    match BloomFilter::intersect_popcount(&(*a).inner, &(*b).inner) {
        Ok(t) => {
            *out = t;
            DimyStatus::Ok
        }
        Err(_) => DimyStatus::InvalidArgument,
    }
}

#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_popcount(
    filter: *const DimyBloomFilter,
    out: *mut u64,
) -> DimyStatus {
    if filter.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    *out = (*filter).inner.popcount();
    DimyStatus::Ok
}

/// Serialize to the DIMB wire format.
#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_serialize(
    filter: *const DimyBloomFilter,
    out: *mut DimyBuffer,
) -> DimyStatus {
    if filter.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    *out = DimyBuffer::from_vec((*filter).inner.serialize());
    DimyStatus::Ok
}

/// Parse a DIMB byte string.
#[no_mangle]
pub unsafe extern "C" fn dimy_bloom_deserialize(
    bytes: *const u8,
    len: usize,
    out: *mut *mut DimyBloomFilter,
) -> DimyStatus {
    if bytes.is_null() || out.is_null() {
        return DimyStatus::NullPointer;
    }
    match BloomFilter::deserialize(std::slice::from_raw_parts(bytes, len)) {
        Ok(filter) => {
            *out = Box::into_raw(Box::new(DimyBloomFilter { inner: filter }));
            DimyStatus::Ok
        }
        Err(_) => DimyStatus::DecodeError,
    }
}

/// Closed-form false-positive estimate `(1 - e^{-kn/m})^k`.
#[no_mangle]
pub extern "C" fn dimy_bloom_fpr_estimate(bits: u32, hashes: u8, items: u64) -> f64 {
    match BloomParams::new(bits, hashes) {
        Ok(params) => dimy::bloom::fpr_estimate(&params, items),
        Err(_) => f64::NAN,
    }
}
