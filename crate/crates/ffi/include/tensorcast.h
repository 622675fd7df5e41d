#ifndef TENSORCAST_H
#define TENSORCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TcStatus {
  TC_STATUS_OK = 0,
  /**
   * Bad configuration value (rank 0, negative epsilon, ...).
   */
  TC_STATUS_CONFIG = 2,
  /**
   * Bad input data (shape mismatch, negative entries, short series).
   */
  TC_STATUS_DATA = 3,
  /**
   * Calibration or numerical failure.
   */
  TC_STATUS_NUMERICAL = 4,
  /**
   * A required pointer was null.
   */
  TC_STATUS_NULL_POINTER = 5,
  /**
   * Internal panic; the library state is unchanged.
   */
  TC_STATUS_PANIC = 6,
} TcStatus;

/**
 * Non-negative CP factors `A`, `B`, `C`.
 */
typedef struct TcFactors TcFactors;

/**
 * Dense non-negative 3-way tensor, first index fastest.
 */
typedef struct TcTensor TcTensor;

/**
 * Solver settings; `epsilon = 0` runs exactly `max_iters` sweeps.
 */
typedef struct TcSolverConfig {
  size_t rank;
  double epsilon;
  size_t max_iters;
  uint64_t seed;
} TcSolverConfig;

/**
 * Summary of a decomposition run.
 */
typedef struct TcFitSummary {
  size_t iterations;
  bool converged;
  double relative_error;
} TcFitSummary;

/**
 * Model parameters of the coupled activity/drift system.
 */
typedef struct TcModelParams {
  double sigma_s;
  double lambda;
  double kappa;
  double sigma_mu;
  double rho;
  double s0;
  double mu0;
} TcModelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *tc_last_error_message(void);

/**
 * Solver defaults (rank 5, epsilon 1e-3, 1000 sweeps, seed 0).
 */
struct TcSolverConfig tc_solver_config_default(void);

/**
 * Copy `data` (length `i*j*k`, first index fastest) into a new tensor.
 *
 * # Safety
 * `data` must point to `i*j*k` readable doubles; `out` must be writable.
 */
enum TcStatus tc_tensor_new(size_t i,
                            size_t j,
                            size_t k,
                            const double *data,
                            size_t len,
                            struct TcTensor **out_tensor);

/**
 * # Safety
 * `tensor` must come from [`tc_tensor_new`] or be null.
 */
void tc_tensor_free(struct TcTensor *tensor);

/**
 * Non-negative CP decomposition. `summary` may be null.
 *
 * # Safety
 * `tensor` must be a live handle; `out_factors` must be writable.
 */
enum TcStatus tc_decompose(const struct TcTensor *tensor,
                           struct TcSolverConfig config,
                           struct TcFactors **out_factors,
                           struct TcFitSummary *summary);

/**
 * # Safety
 * `factors` must come from [`tc_decompose`] or be null.
 */
void tc_factors_free(struct TcFactors *factors);

/**
 * Rank and the tensor dimensions the factors were fitted to.
 *
 * # Safety
 * `factors` must be a live handle; the out pointers must be writable.
 */
enum TcStatus tc_factors_shape(const struct TcFactors *factors, size_t *out_rank, size_t *out_dims);

/**
 * Copy column `rank` (1-based) of the time factor `C` into `buf`, which
 * must hold at least `K` values.
 *
 * # Safety
 * `factors` must be a live handle; `buf` must have room for `len` doubles.
 */
enum TcStatus tc_factors_time_factor(const struct TcFactors *factors,
                                     size_t rank,
                                     double *buf,
                                     size_t len);

/**
 * Calibrate the model on a time factor and a slot-aligned rate series of
 * equal length, with default calibration settings and slot length `dt`.
 *
 * # Safety
 * The inputs must point to `len` readable doubles; `out_params` writable.
 */
enum TcStatus tc_calibrate(const double *time_factor,
                           const double *rates,
                           size_t len,
                           double dt,
                           struct TcModelParams *out_params);

/**
 * Simulate the coupled system for `n_steps` steps of length `dt` and write
 * the terminal activity of each path to `terminals` (length `n_paths`).
 * `out_absorbed` may be null.
 *
 * # Safety
 * `terminals` must have room for `n_paths` doubles.
 */
enum TcStatus tc_simulate(struct TcModelParams params,
                          size_t n_paths,
                          size_t n_steps,
                          double dt,
                          uint64_t seed,
                          double *terminals,
                          size_t *out_absorbed);

/**
 * Fraction of terminal values at or above `strike`, with its standard error.
 * `out_std_err` may be null.
 *
 * # Safety
 * `terminals` must point to `len` readable doubles.
 */
enum TcStatus tc_digital_value(const double *terminals,
                               size_t len,
                               double strike,
                               double *out_value,
                               double *out_std_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TENSORCAST_H */
