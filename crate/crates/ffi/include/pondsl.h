#ifndef PONDSL_H
#define PONDSL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PondslStatus {
  PONDSL_STATUS_OK = 0,
  PONDSL_STATUS_NULL_POINTER = 1,
  PONDSL_STATUS_INVALID_UTF8 = 2,
  /**
   * Unknown key, unparsable value or an inconsistent configuration.
   */
  PONDSL_STATUS_CONFIG_ERROR = 3,
  /**
   * The simulation or schedule computation failed.
   */
  PONDSL_STATUS_RUNTIME_ERROR = 4,
  /**
   * Index past the end of a result.
   */
  PONDSL_STATUS_OUT_OF_RANGE = 5,
  PONDSL_STATUS_PANIC = 6,
} PondslStatus;

typedef enum PondslMode {
  PONDSL_MODE_SEGREGATED = 0,
  PONDSL_MODE_MULTIPLEXED = 1,
} PondslMode;

/**
 * Settings accumulated key by key; resolved when used.
 */
typedef struct PondslConfig PondslConfig;

/**
 * A computed polling cycle.
 */
typedef struct PondslSchedule PondslSchedule;

typedef struct PondslMetrics {
  uint64_t max_cpe_occupancy_bits;
  uint64_t max_onu_occupancy_bits;
  double loss_rate;
  double mean_dsl_delay_s;
  double mean_pon_delay_s;
  uint64_t packets_delivered;
  double throughput_bps;
  uint64_t generated;
  uint64_t dropped_cpe;
  uint64_t dropped_drop_point;
  uint64_t pauses;
} PondslMetrics;

/**
 * One transmission slot of a [`PondslSchedule`].
 */
typedef struct PondslSlot {
  size_t cpe;
  uint64_t pon_bits;
  /**
   * CPE start on the nanosecond clock.
   */
  uint64_t cpe_start_ns;
  double sub_window_start_ns;
} PondslSlot;

typedef struct PondslOrder {
  /**
   * 12 when CPE 1 goes first, 21 otherwise.
   */
  uint32_t order;
  bool tie;
  double t12_ns;
  double t21_ns;
  double th1_bits;
  double th2_bits;
} PondslOrder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pondsl_last_error(void);

/**
 * A configuration holding the defaults. Free with [`pondsl_config_free`].
 */
struct PondslConfig *pondsl_config_new(void);

/**
 * # Safety
 * `cfg` must come from [`pondsl_config_new`] and not be used afterwards.
 */
void pondsl_config_free(struct PondslConfig *cfg);

/**
 * Sets one key, overriding earlier values. Values use the units of the
 * configuration files: seconds for times, bytes for capacities.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum PondslStatus pondsl_config_set(struct PondslConfig *cfg, const char *key, const char *value);

/**
 * Merges a whole configuration text (`key = value` lines, `#` comments).
 *
 * # Safety
 * `cfg` must be a live handle; `text` a NUL-terminated string.
 */
enum PondslStatus pondsl_config_load_text(struct PondslConfig *cfg, const char *config_text);

/**
 * Runs one simulation.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum PondslStatus pondsl_run(const struct PondslConfig *cfg, struct PondslMetrics *out);

/**
 * Computes the gated cycle for `n` grants (bits) at OLT-ONU delay `tau_ns`.
 * Segregated cycles serve the CPEs in ascending grant order. The CPE count
 * of `cfg` is replaced by `n`. Free the result with
 * [`pondsl_schedule_free`].
 *
 * # Safety
 * `cfg` must be a live handle, `grants` must point to `n` values and `out`
 * must be writable.
 */
enum PondslStatus pondsl_schedule_new(const struct PondslConfig *cfg,
                                      enum PondslMode mode,
                                      uint64_t tau_ns,
                                      const uint64_t *grants,
                                      size_t n,
                                      struct PondslSchedule **out);

/**
 * # Safety
 * `s` must come from [`pondsl_schedule_new`] and not be used afterwards.
 */
void pondsl_schedule_free(struct PondslSchedule *s);

/**
 * Number of transmission slots; 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t pondsl_schedule_len(const struct PondslSchedule *s);

/**
 * Exact earliest ONU start and end of the ONU data, in nanoseconds.
 *
 * # Safety
 * `s` must be a live handle and `onu_start_ns`, `onu_end_ns` writable.
 */
enum PondslStatus pondsl_schedule_onu(const struct PondslSchedule *s,
                                      double *onu_start_ns,
                                      double *onu_end_ns);

/**
 * Transmission slot `slot`, in PON order.
 *
 * # Safety
 * `s` must be a live handle and `out` writable.
 */
enum PondslStatus pondsl_schedule_slot(const struct PondslSchedule *s,
                                       size_t slot,
                                       struct PondslSlot *out);

/**
 * Better order for two CPEs with grants `g1`, `g2` (bits); the delays are
 * the first two entries of the configured `delta`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum PondslStatus pondsl_best_order(const struct PondslConfig *cfg,
                                    uint64_t tau_ns,
                                    uint64_t g1,
                                    uint64_t g2,
                                    struct PondslOrder *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PONDSL_H */
