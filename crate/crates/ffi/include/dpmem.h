#ifndef DPMEM_H
#define DPMEM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  DPMEM_STATUS_OK = 0,
  DPMEM_STATUS_NULL_POINTER = 1,
  DPMEM_STATUS_INVALID_UTF8 = 2,
  DPMEM_STATUS_INVALID_ARGUMENT = 3,
  DPMEM_STATUS_SNAPSHOT = 4,
  DPMEM_STATUS_BUFFER_TOO_SMALL = 5,
  DPMEM_STATUS_UNSUPPORTED = 6,
  DPMEM_STATUS_PANIC = 7,
} DpmemStatus;

typedef enum {
  DPMEM_UPDATE_KIND_EMPTY = 0,
  DPMEM_UPDATE_KIND_INSERT = 1,
  DPMEM_UPDATE_KIND_DELETE = 2,
  /**
   * `value` is the feature index.
   */
  DPMEM_UPDATE_KIND_FEATURE_FLIP = 3,
  /**
   * `value` is the new item.
   */
  DPMEM_UPDATE_KIND_ITEM_CHANGE = 4,
} DpmemUpdateKind;

/**
 * Opaque estimator handle.
 */
typedef struct DpmemEstimator DpmemEstimator;

typedef struct {
  DpmemUpdateKind kind;
  uint32_t user;
  uint32_t value;
} DpmemUpdate;

typedef struct {
  double main_bits;
  double slack_bits;
  double value_bits;
} DpmemCommBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null.
 */
const char *dpmem_last_error(void);

/**
 * Builds an estimator from a JSON spec such as
 * `{"name":"capped_dp_counter","params":{"cap":128,"epsilon":0.5,"delta":1e-12}}`.
 * Every parameter without a fixed default must be given explicitly.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` a writable pointer.
 */
DpmemStatus dpmem_estimator_new(const char *spec_json, uint64_t seed, DpmemEstimator **out);

/**
 * # Safety
 * `est` must come from [`dpmem_estimator_new`] and not be used afterwards. Null is a no-op.
 */
void dpmem_estimator_free(DpmemEstimator *est);

/**
 * # Safety
 * `est` must be a live handle and `update` readable.
 */
DpmemStatus dpmem_estimator_process(DpmemEstimator *est, const DpmemUpdate *update);

/**
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
DpmemStatus dpmem_estimator_query_count(DpmemEstimator *est, double *out);

/**
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
DpmemStatus dpmem_estimator_query_max_feature(DpmemEstimator *est, uint32_t *out);

/**
 * Item at 1-based `rank`.
 *
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
DpmemStatus dpmem_estimator_query_rank(DpmemEstimator *est, uint64_t rank, uint32_t *out);

/**
 * Snapshot size in bytes.
 *
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
DpmemStatus dpmem_estimator_snapshot_len(DpmemEstimator *est, size_t *out);

/**
 * Copies the snapshot into `buf`. `written` receives the snapshot length even
 * when `cap` is too small.
 *
 * # Safety
 * `buf` must be writable for `cap` bytes; `written` must be writable.
 */
DpmemStatus dpmem_estimator_snapshot_copy(DpmemEstimator *est,
                                          uint8_t *buf,
                                          size_t cap,
                                          size_t *written);

/**
 * # Safety
 * `bytes` must be readable for `len` bytes.
 */
DpmemStatus dpmem_estimator_restore(DpmemEstimator *est, const uint8_t *bytes, size_t len);

/**
 * Natural-log binomial coefficient for real `0 <= m <= n`.
 *
 * # Safety
 * `out` must be writable.
 */
DpmemStatus dpmem_log_binom(double n, double m, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
DpmemStatus dpmem_comm_lower_bound_exact(double h,
                                         double k,
                                         double eps1,
                                         double eps2,
                                         double slack_constant,
                                         DpmemCommBound *out);

/**
 * # Safety
 * `out` must be writable.
 */
DpmemStatus dpmem_comm_lower_bound_stirling(double h,
                                            double k,
                                            double eps1,
                                            double eps2,
                                            double slack_constant,
                                            DpmemCommBound *out);

/**
 * `T^(gamma_w + gamma_k - 2 gamma_h)`; `exponent` may be null.
 *
 * # Safety
 * `value` must be writable; `exponent` writable or null.
 */
DpmemStatus dpmem_theorem_bound(double t,
                                double gamma_w,
                                double gamma_k,
                                double gamma_h,
                                double *value,
                                double *exponent);

/**
 * # Safety
 * `out` must be writable.
 */
DpmemStatus dpmem_encoding_bound(double n, double k, double k_prime, double z, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPMEM_H */
