#ifndef OSVOL_H
#define OSVOL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OsvolStatus {
  OSVOL_STATUS_OK = 0,
  OSVOL_STATUS_NULL_POINTER = 1,
  OSVOL_STATUS_INVALID_ARGUMENT = 2,
  OSVOL_STATUS_NUMERIC_FAILURE = 3,
  OSVOL_STATUS_DEGENERATE = 4,
  OSVOL_STATUS_PANIC = 5,
} OsvolStatus;

/**
 * Opaque volatility path produced by [`osvol_kernel_os_volatility`].
 */
typedef struct OsvolVolPath OsvolVolPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next osvol call on the same thread.
 */
const char *osvol_last_error_message(void);

double osvol_normal_cdf(double x);

/**
 * CDF of the k-th smallest of `n_prime` standard normals at `x`.
 *
 * # Safety
 * `out_value` must be a valid pointer to a double.
 */
enum OsvolStatus osvol_order_stat_cdf(double x, size_t k, size_t n_prime, double *out_value);

/**
 * Threshold θ with P(X_{k:n'} ≤ θ) = 1 − p.
 *
 * # Safety
 * `out_value` must be a valid pointer to a double.
 */
enum OsvolStatus osvol_order_stat_quantile(double p, size_t k, size_t n_prime, double *out_value);

/**
 * Order-statistic integrated variance. `out_flags` may be null; otherwise
 * it receives `n` jump indicators in time order.
 *
 * # Safety
 * `values` must point to `n` doubles, `out_iv` to a double and
 * `out_flags`, when not null, to `n` bytes.
 */
enum OsvolStatus osvol_os_iv(const double *values,
                             size_t n,
                             double dt,
                             double p,
                             double *out_iv,
                             uint8_t *out_flags);

/**
 * Iterative kernel estimator with a one-sided uniform kernel. On success
 * `*out_path` owns a handle to release with [`osvol_vol_path_free`].
 *
 * # Safety
 * `values` must point to `n` doubles and `out_path` to a writable pointer.
 */
enum OsvolStatus osvol_kernel_os_volatility(const double *values,
                                            size_t n,
                                            double dt,
                                            double p,
                                            size_t bandwidth,
                                            size_t max_iter,
                                            struct OsvolVolPath **out_path);

/**
 * # Safety
 * `path` must be null or a handle from [`osvol_kernel_os_volatility`]
 * that has not been freed.
 */
void osvol_vol_path_free(struct OsvolVolPath *path);

/**
 * Number of observations, 0 for a null handle.
 *
 * # Safety
 * `path` must be null or a live handle.
 */
size_t osvol_vol_path_len(const struct OsvolVolPath *path);

/**
 * # Safety
 * `path` must be null or a live handle.
 */
size_t osvol_vol_path_jump_count(const struct OsvolVolPath *path);

/**
 * # Safety
 * `path` must be null or a live handle.
 */
size_t osvol_vol_path_iterations(const struct OsvolVolPath *path);

/**
 * 1 when the jump set settled before `max_iter`.
 *
 * # Safety
 * `path` must be null or a live handle.
 */
uint8_t osvol_vol_path_converged(const struct OsvolVolPath *path);

/**
 * Copy the local volatilities into `out` (capacity `len`, which must be
 * at least the path length).
 *
 * # Safety
 * `path` must be a live handle and `out` must point to `len` doubles.
 */
enum OsvolStatus osvol_vol_path_sigmas(const struct OsvolVolPath *path, double *out, size_t len);

/**
 * Copy the jump flags into `out` as 0/1 bytes.
 *
 * # Safety
 * `path` must be a live handle and `out` must point to `len` bytes.
 */
enum OsvolStatus osvol_vol_path_flags(const struct OsvolVolPath *path, uint8_t *out, size_t len);

/**
 * Jumping VaR from the last `window_n` losses (negated returns), their
 * local volatilities and jump flags.
 *
 * # Safety
 * `losses` and `vols` must point to `n` doubles, `flags` to `n` bytes and
 * `out_var` to a double.
 */
enum OsvolStatus osvol_var_jumping(const double *losses,
                                   const double *vols,
                                   const uint8_t *flags,
                                   size_t n,
                                   size_t window_n,
                                   size_t forecast_t,
                                   double lambda,
                                   double *out_var);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* OSVOL_H */
