#ifndef BASKET_ETD_H
#define BASKET_ETD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum BetdStatus {
  BETD_STATUS_OK = 0,
  BETD_STATUS_NULL_POINTER = 1,
  BETD_STATUS_INVALID_INPUT = 2,
  BETD_STATUS_CONFIG = 3,
  BETD_STATUS_UNSTABLE = 4,
  BETD_STATUS_OUT_OF_DOMAIN = 5,
  BETD_STATUS_NUMERICAL = 6,
  BETD_STATUS_IO = 7,
  BETD_STATUS_NOT_RUN = 8,
  BETD_STATUS_BUFFER_TOO_SMALL = 9,
  BETD_STATUS_PANIC = 10,
} BetdStatus;

/*
 Opaque pricer handle.
 */
typedef struct BetdPricer BetdPricer;

/*
 Step-size diagnostics of a configured run.
 */
typedef struct BetdStability {
  double h_max;
  double k_max;
  double h_used;
  double k_used;
  bool h_satisfied;
  bool k_satisfied;
  bool satisfied;
  double mu_inf;
  bool metzler;
} BetdStability;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *betd_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *betd_version(void);

/*
 Parses and validates `config_toml`; on success stores a new handle in
 `*out`, which must be released with [`betd_pricer_free`].

 # Safety
 `config_toml` must be a NUL-terminated string and `out` writable.
 */
enum BetdStatus betd_pricer_new(const char *config_toml, struct BetdPricer **out);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `pricer` must come from [`betd_pricer_new`] and not be used afterwards.
 */
void betd_pricer_free(struct BetdPricer *pricer);

/*
 Allows runs that violate the step-size conditions.

 # Safety
 `pricer` must be a live handle.
 */
enum BetdStatus betd_pricer_set_override_stability(struct BetdPricer *pricer, bool enabled);

/*
 Stability report for the configured grid and time step, available
 before [`betd_pricer_run`].

 # Safety
 `pricer` must be a live handle and `out` writable.
 */
enum BetdStatus betd_pricer_stability(const struct BetdPricer *pricer, struct BetdStability *out);

/*
 Runs the time stepping. Returns `BETD_STATUS_UNSTABLE` if the step
 conditions fail and the override is off.

 # Safety
 `pricer` must be a live handle.
 */
enum BetdStatus betd_pricer_run(struct BetdPricer *pricer);

/*
 Interpolated price at `spot` (`len` asset prices).

 # Safety
 `pricer` must be a live handle, `spot` readable for `len` values and
 `price` writable.
 */
enum BetdStatus betd_pricer_query(const struct BetdPricer *pricer,
                                  const double *spot,
                                  size_t len,
                                  double *price);

/*
 Number of grid nodes of the last run.

 # Safety
 `pricer` must be a live handle and `out` writable.
 */
enum BetdStatus betd_pricer_node_count(const struct BetdPricer *pricer, size_t *out);

/*
 Copies the price at every node, in flat-index order, into `out`.

 # Safety
 `pricer` must be a live handle and `out` writable for `len` values.
 */
enum BetdStatus betd_pricer_surface(const struct BetdPricer *pricer, double *out, size_t len);

/*
 Writes the surface CSV of the last run to `path`.

 # Safety
 `pricer` must be a live handle and `path` a NUL-terminated string.
 */
enum BetdStatus betd_pricer_write_surface(const struct BetdPricer *pricer, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BASKET_ETD_H */
