#ifndef DIMY_H
#define DIMY_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
enum DimyStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * Success.
   */
  DIMY_STATUS_OK = 0,
  /**
   * Success, and this advertisement completed an encounter registration.
   */
  DIMY_STATUS_ENCOUNTER_REGISTERED = 1,
  /**
   * A required pointer argument was null.
   */
  DIMY_STATUS_NULL_POINTER = -1,
  /**
   * An argument was out of range or malformed.
   */
  DIMY_STATUS_INVALID_ARGUMENT = -2,
  /**
   * `tick` was called with a non-increasing minute.
   */
  DIMY_STATUS_CLOCK_REGRESSION = -3,
  /**
   * The device has no daily filters yet.
   */
  DIMY_STATUS_NO_DATA = -4,
  /**
   * Bytes failed to parse as a filter or frame.
   */
  DIMY_STATUS_DECODE_ERROR = -5,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum DimyStatus DimyStatus;
#else
typedef int32_t DimyStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque Bloom-filter handle.
 */
typedef struct DimyBloomFilter DimyBloomFilter;

/**
 * Opaque device handle.
 */
typedef struct DimyDevice DimyDevice;

/**
 * A heap buffer owned by the library; release with `dimy_buffer_free`.
 */
typedef struct DimyBuffer {
  uint8_t *ptr;
  uintptr_t len;
} DimyBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *dimy_version(void);

/**
 * Release a buffer returned by this library. Null/empty buffers are fine.
 */
void dimy_buffer_free(struct DimyBuffer buf);

/**
 * Create a device. `group_mode`: 0 = wire-faithful 16-byte IDs (default),
 * 1 = hardened 32-byte IDs. `seed` drives all of the device's randomness;
 * real deployments must pass entropy, simulations pass a fixed seed.
 */
DimyStatus dimy_device_new(uint32_t group_mode,
                           uint64_t seed,
                           uint64_t start_minute,
                           bool dual_slot,
                           struct DimyDevice **out);

void dimy_device_free(struct DimyDevice *device);

/**
 * Size in bytes of one advertisement frame for this device's group mode.
 */
uintptr_t dimy_device_frame_len(const struct DimyDevice *device);

/**
 * Advance the device to `minute` and collect the frames to broadcast.
 * `out_frames` receives the concatenated fixed-size frames (see
 * `dimy_device_frame_len`); the count is `len / frame_len`.
 */
DimyStatus dimy_device_tick(struct DimyDevice *device,
                            uint64_t minute,
                            struct DimyBuffer *out_frames);

/**
 * Feed one received frame. Returns `ENCOUNTER_REGISTERED` when this frame
 * completed a reconstruction (hostile or malformed frames are silently
 * absorbed, per protocol).
 */
DimyStatus dimy_device_receive(struct DimyDevice *device,
                               const uint8_t *frame,
                               uintptr_t frame_len,
                               uint64_t minute);

/**
 * Union of the retained daily filters, tagged for upload.
 */
DimyStatus dimy_device_build_cbf(const struct DimyDevice *device, struct DimyBloomFilter **out);

/**
 * Union of the retained daily filters for querying, plus the day index of
 * the oldest one (T_old).
 */
DimyStatus dimy_device_build_qbf(const struct DimyDevice *device,
                                 struct DimyBloomFilter **out,
                                 uint64_t *out_oldest_day);

/**
 * Complete byte dump of retained device state (used by ephemerality
 * audits).
 */
DimyStatus dimy_device_snapshot(const struct DimyDevice *device, struct DimyBuffer *out);

/**
 * Create an empty filter. `role`: 1 = daily, 2 = contact (upload),
 * 3 = query. Pass `bits = 800000, hashes = 3` for the protocol default.
 */
DimyStatus dimy_bloom_new(uint32_t bits,
                          uint8_t hashes,
                          uint8_t role,
                          struct DimyBloomFilter **out);

void dimy_bloom_free(struct DimyBloomFilter *filter);

DimyStatus dimy_bloom_insert(struct DimyBloomFilter *filter,
                             const uint8_t *item,
                             uintptr_t item_len);

DimyStatus dimy_bloom_contains(const struct DimyBloomFilter *filter,
                               const uint8_t *item,
                               uintptr_t item_len,
                               bool *out);

/**
 * Bitwise-OR `src` into `dst`; params must match.
 */
DimyStatus dimy_bloom_union_in_place(struct DimyBloomFilter *dst,
                                     const struct DimyBloomFilter *src);

/**
 * Popcount of the bitwise AND; params must match.
 */
DimyStatus dimy_bloom_intersect_popcount(const struct DimyBloomFilter *a,
                                         const struct DimyBloomFilter *b,
                                         uint64_t *out);

DimyStatus dimy_bloom_popcount(const struct DimyBloomFilter *filter, uint64_t *out);

/**
 * Serialize to the DIMB wire format.
 */
DimyStatus dimy_bloom_serialize(const struct DimyBloomFilter *filter, struct DimyBuffer *out);

/**
 * Parse a DIMB byte string.
 */
DimyStatus dimy_bloom_deserialize(const uint8_t *bytes,
                                  uintptr_t len,
                                  struct DimyBloomFilter **out);

/**
 * Closed-form false-positive estimate `(1 - e^{-kn/m})^k`.
 */
double dimy_bloom_fpr_estimate(uint32_t bits, uint8_t hashes, uint64_t items);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIMY_H */
