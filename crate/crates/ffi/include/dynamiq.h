#ifndef DYNAMIQ_H
#define DYNAMIQ_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DynamiqStatus {
  DYNAMIQ_STATUS_OK = 0,
  DYNAMIQ_STATUS_NULL_POINTER = 1,
  DYNAMIQ_STATUS_INVALID_ARGUMENT = 2,
  DYNAMIQ_STATUS_BUDGET_INFEASIBLE = 3,
  DYNAMIQ_STATUS_SCALE_OVERFLOW = 4,
  DYNAMIQ_STATUS_MALFORMED = 5,
  DYNAMIQ_STATUS_CONFIG = 6,
  DYNAMIQ_STATUS_IO = 7,
  DYNAMIQ_STATUS_PANIC = 8,
} DynamiqStatus;

typedef enum DynamiqTopology {
  DYNAMIQ_TOPOLOGY_RING = 0,
  DYNAMIQ_TOPOLOGY_BUTTERFLY = 1,
} DynamiqTopology;

/**
 * Opaque pipeline configuration.
 */
typedef struct DynamiqConfig DynamiqConfig;

/**
 * Opaque result of one all-reduce round.
 */
typedef struct DynamiqRound DynamiqRound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the library.
 */
const char *dynamiq_last_error(void);

/**
 * Creates a configuration with default settings.
 */
struct DynamiqConfig *dynamiq_config_new(void);

/**
 * Parses a JSON pipeline configuration. Missing keys keep their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DynamiqStatus dynamiq_config_from_json(const char *json, struct DynamiqConfig **out);

/**
 * # Safety
 * `config` must come from this library and not be freed twice. Null is ignored.
 */
void dynamiq_config_free(struct DynamiqConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DynamiqStatus dynamiq_config_set_budget(struct DynamiqConfig *config,
                                             double bits_per_coordinate);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DynamiqStatus dynamiq_config_set_topology(struct DynamiqConfig *config,
                                               enum DynamiqTopology topology);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DynamiqStatus dynamiq_config_set_seed(struct DynamiqConfig *config,
                                           uint64_t seed,
                                           uint64_t round);

/**
 * Nonzero runs each worker on its own thread.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum DynamiqStatus dynamiq_config_set_threaded(struct DynamiqConfig *config, int32_t threaded);

/**
 * Runs one round over `n` worker gradients of length `d`.
 *
 * # Safety
 * `workers` must point to `n` pointers, each to `d` readable floats.
 */
enum DynamiqStatus dynamiq_allreduce(const struct DynamiqConfig *config,
                                     const float *const *workers,
                                     size_t n,
                                     size_t d,
                                     struct DynamiqRound **out);

/**
 * # Safety
 * `round` must come from this library and not be freed twice. Null is ignored.
 */
void dynamiq_round_free(struct DynamiqRound *round);

/**
 * Length of the synchronized gradient, or 0 for a null handle.
 *
 * # Safety
 * `round` must be a live handle or null.
 */
size_t dynamiq_round_len(const struct DynamiqRound *round);

/**
 * Copies the synchronized gradient into `out`, which holds `len` floats.
 *
 * # Safety
 * `round` must be a live handle and `out` writable for `len` floats.
 */
enum DynamiqStatus dynamiq_round_synced(const struct DynamiqRound *round, float *out, size_t len);

/**
 * vNMSE of the round against the exact sum; NaN for a null handle.
 *
 * # Safety
 * `round` must be a live handle or null.
 */
double dynamiq_round_vnmse(const struct DynamiqRound *round);

/**
 * Payload and scale bits per coordinate of one compressed representation.
 *
 * # Safety
 * `round` must be a live handle or null.
 */
double dynamiq_round_bits_per_coordinate(const struct DynamiqRound *round);

/**
 * Hex SHA-256 of all wire traffic. Valid until the handle is freed.
 *
 * # Safety
 * `round` must be a live handle or null.
 */
const char *dynamiq_round_traffic_hash(const struct DynamiqRound *round);

/**
 * `||estimate - truth||^2 / ||truth||^2`.
 *
 * # Safety
 * Both arrays must hold `len` readable values and `out` must be writable.
 */
enum DynamiqStatus dynamiq_vnmse(const float *estimate,
                                 const double *truth,
                                 size_t len,
                                 double *out);

/**
 * Chooses a width in {2, 4, 8} for each super-group from its summed squared
 * norm. `fast` nonzero selects the closed-form allocator.
 *
 * # Safety
 * `norms` must hold `count` floats and `out_widths` be writable for `count` values.
 */
enum DynamiqStatus dynamiq_allocate(const float *norms,
                                    size_t count,
                                    double bits_per_coordinate,
                                    size_t group_size,
                                    size_t super_group_size,
                                    int32_t fast,
                                    uint32_t *out_widths);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNAMIQ_H */
