#ifndef REPREL_H
#define REPREL_H

/* Generated by cbindgen from reprel-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API call.
 */
typedef enum ReprelStatus {
  REPREL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  REPREL_STATUS_NULL_ARGUMENT = 1,
  /**
   * A parameter is outside its domain (zero sizes, bad enum value, ...).
   */
  REPREL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Dimensions or lengths do not line up.
   */
  REPREL_STATUS_SHAPE_MISMATCH = 3,
  /**
   * A zero vector was used where a direction is required.
   */
  REPREL_STATUS_DEGENERATE_INPUT = 4,
  /**
   * The operation needs at least two ensemble members.
   */
  REPREL_STATUS_ENSEMBLE_TOO_SMALL = 5,
  /**
   * Rank correlation is undefined (constant input).
   */
  REPREL_STATUS_UNDEFINED_CORRELATION = 6,
  /**
   * Values violate a domain invariant (non-finite entries, ...).
   */
  REPREL_STATUS_INVALID_DATA = 7,
  /**
   * Unexpected internal failure.
   */
  REPREL_STATUS_INTERNAL_ERROR = 8,
} ReprelStatus;

/**
 * Distance metric selector.
 */
typedef enum ReprelMetric {
  REPREL_METRIC_EUCLIDEAN = 0,
  REPREL_METRIC_COSINE = 1,
} ReprelMetric;

/**
 * Neighbor-set similarity selector.
 */
typedef enum ReprelSimilarity {
  REPREL_SIMILARITY_JACCARD = 0,
  REPREL_SIMILARITY_OVERLAP = 1,
} ReprelSimilarity;

/**
 * Incremental ensemble constructor (opaque).
 */
typedef struct ReprelBuilder ReprelBuilder;

/**
 * Finished, immutable ensemble (opaque).
 */
typedef struct ReprelEnsemble ReprelEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a builder for an ensemble of `n_ref x dim` reference matrices and
 * `n_test x dim` test matrices. Returns null when a size is zero.
 */
struct ReprelBuilder *reprel_builder_new(uintptr_t n_ref, uintptr_t n_test, uintptr_t dim);

/**
 * Adds one member from row-major buffers of `n_ref*dim` and `n_test*dim`
 * doubles.
 *
 * # Safety
 * `builder` must come from [`reprel_builder_new`] and not be freed;
 * `reference` and `test` must point to the documented number of readable
 * doubles.
 */
enum ReprelStatus reprel_builder_add_member(struct ReprelBuilder *builder,
                                            const double *reference,
                                            const double *test);

/**
 * Finishes the builder into an immutable ensemble. On success the builder
 * is consumed (do not free it again) and `*out` owns the ensemble.
 *
 * # Safety
 * `builder` must come from [`reprel_builder_new`]; `out` must be a valid
 * pointer slot.
 */
enum ReprelStatus reprel_builder_finish(struct ReprelBuilder *builder, struct ReprelEnsemble **out);

/**
 * Frees a builder that was not consumed by [`reprel_builder_finish`].
 *
 * # Safety
 * `builder` must come from [`reprel_builder_new`] and not already be freed
 * or consumed.
 */
void reprel_builder_free(struct ReprelBuilder *builder);

/**
 * Frees an ensemble handle.
 *
 * # Safety
 * `ensemble` must come from [`reprel_builder_finish`] and not already be
 * freed.
 */
void reprel_ensemble_free(struct ReprelEnsemble *ensemble);

/**
 * Number of test rows scored per call; the output buffer length.
 *
 * # Safety
 * `ensemble` must be a live handle.
 */
uintptr_t reprel_ensemble_test_rows(const struct ReprelEnsemble *ensemble);

/**
 * Number of members in the ensemble.
 *
 * # Safety
 * `ensemble` must be a live handle.
 */
uintptr_t reprel_ensemble_members(const struct ReprelEnsemble *ensemble);

/**
 * k-NN neighborhood-consistency score for every test row (higher is more
 * reliable). `out` must hold `reprel_ensemble_test_rows` doubles. With
 * `normalized` the score is rescaled by the member-pair count to saturate
 * at 1 instead of (M-1)/(2M).
 *
 * # Safety
 * `ensemble` must be a live handle and `out` a writable buffer of
 * `reprel_ensemble_test_rows` doubles.
 */
enum ReprelStatus reprel_nc_k_scores(const struct ReprelEnsemble *ensemble,
                                     uintptr_t k,
                                     enum ReprelMetric metric,
                                     enum ReprelSimilarity sim,
                                     bool normalized,
                                     double *out);

/**
 * ε-neighborhood consistency score for every test row.
 *
 * # Safety
 * As for [`reprel_nc_k_scores`].
 */
enum ReprelStatus reprel_nc_eps_scores(const struct ReprelEnsemble *ensemble,
                                       double eps,
                                       enum ReprelMetric metric,
                                       enum ReprelSimilarity sim,
                                       bool normalized,
                                       double *out);

/**
 * Mean k-minimum-distance score for one member (lower is more reliable).
 *
 * # Safety
 * As for [`reprel_nc_k_scores`].
 */
enum ReprelStatus reprel_dist_k_scores(const struct ReprelEnsemble *ensemble,
                                       uintptr_t member,
                                       uintptr_t k,
                                       enum ReprelMetric metric,
                                       double *out);

/**
 * L2 norm of each (unnormalized) test representation for one member
 * (higher is more reliable).
 *
 * # Safety
 * As for [`reprel_nc_k_scores`].
 */
enum ReprelStatus reprel_norm_scores(const struct ReprelEnsemble *ensemble,
                                     uintptr_t member,
                                     double *out);

/**
 * Cross-member representation variance per test row (lower is more
 * reliable).
 *
 * # Safety
 * As for [`reprel_nc_k_scores`].
 */
enum ReprelStatus reprel_feature_variance_scores(const struct ReprelEnsemble *ensemble,
                                                 double *out);

/**
 * Kendall tau-b between two equal-length samples.
 *
 * # Safety
 * `x` and `y` must point to `len` readable doubles, `out` to one writable
 * double.
 */
enum ReprelStatus reprel_kendall_tau_b(const double *x,
                                       const double *y,
                                       uintptr_t len,
                                       double *out);

/**
 * Static description of a status code.
 */
const char *reprel_status_message(enum ReprelStatus status);

/**
 * Library version as a static C string.
 */
const char *reprel_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPREL_H */
