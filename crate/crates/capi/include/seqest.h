#ifndef SEQEST_H
#define SEQEST_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Accuracy functions selectable through the ABI.
 */
typedef enum SeqestAccuracy {
  SEQEST_ACCURACY_TRACE = 0,
  SEQEST_ACCURACY_FROBENIUS = 1,
} SeqestAccuracy;

/**
 * Status codes returned by every API call.
 */
typedef enum SeqestStatus {
  SEQEST_STATUS_OK = 0,
  SEQEST_STATUS_NULL_ARGUMENT = 1,
  SEQEST_STATUS_INVALID_ARGUMENT = 2,
  SEQEST_STATUS_DIMENSION_MISMATCH = 3,
  SEQEST_STATUS_SINGULAR = 4,
  SEQEST_STATUS_NOT_CONVERGED = 5,
  SEQEST_STATUS_NO_THRESHOLD = 6,
  SEQEST_STATUS_BRACKET_FAILURE = 7,
  SEQEST_STATUS_HORIZON_EXCEEDED = 8,
  SEQEST_STATUS_INTERNAL_ERROR = 9,
} SeqestStatus;

/**
 * Opaque recursive-least-squares estimator.
 */
typedef struct SeqestEstimator SeqestEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *seqest_status_message(enum SeqestStatus status);

/**
 * Creates an estimator for an `n`-dimensional parameter with noise
 * variance `sigma2`. Returns NULL on invalid input.
 */
struct SeqestEstimator *seqest_estimator_new(uintptr_t n, double sigma2);

/**
 * Releases an estimator. NULL is accepted and ignored.
 */
void seqest_estimator_free(struct SeqestEstimator *est);

/**
 * Feeds one observation `y = h . x + w` into the recursion.
 *
 * # Safety
 * `h` must point to `n` readable doubles; `est` must be a live handle.
 */
enum SeqestStatus seqest_estimator_update(struct SeqestEstimator *est,
                                          const double *h,
                                          uintptr_t n,
                                          double y);

/**
 * Copies the current estimate into `out` (length `n`).
 *
 * # Safety
 * `out` must point to `n` writable doubles; `est` must be a live handle.
 */
enum SeqestStatus seqest_estimator_estimate(const struct SeqestEstimator *est,
                                            double *out,
                                            uintptr_t n);

/**
 * Writes the current accuracy statistic (the chosen function of the
 * conditional covariance) to `out`; infinity while the information matrix
 * is still singular.
 *
 * # Safety
 * `out` must be a writable double; `est` must be a live handle.
 */
enum SeqestStatus seqest_estimator_statistic(const struct SeqestEstimator *est,
                                             enum SeqestAccuracy accuracy,
                                             double *out);

/**
 * Number of observations consumed so far.
 *
 * # Safety
 * `est` must be a live handle; NULL returns 0.
 */
uintptr_t seqest_estimator_samples(const struct SeqestEstimator *est);

/**
 * Solves the scalar dynamic program for cost `lambda` and noise variance
 * `sigma2`, writing the optimal stopping threshold to `out_threshold`.
 *
 * # Safety
 * `out_threshold` must be a writable double.
 */
enum SeqestStatus seqest_scalar_threshold(double lambda, double sigma2, double *out_threshold);

/**
 * Calibrates the scalar stopping threshold so the simulated mean squared
 * error meets `target_mse` (standard-normal coefficients).
 *
 * # Safety
 * `out_threshold` must be a writable double.
 */
enum SeqestStatus seqest_calibrate_scalar(double target_mse,
                                          double sigma2,
                                          uintptr_t trials,
                                          uint64_t seed,
                                          double *out_threshold);

/**
 * Diagonal entry of the inverse equicorrelation matrix (closed form).
 *
 * # Safety
 * `out_kappa` must be a writable double.
 */
enum SeqestStatus seqest_kappa_equicorr(uintptr_t n, double r, double *out_kappa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQEST_H */
