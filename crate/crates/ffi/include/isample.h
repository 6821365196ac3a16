#ifndef ISAMPLE_H
#define ISAMPLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsStatus {
  IS_STATUS_OK = 0,
  IS_STATUS_NULL_POINTER = 1,
  IS_STATUS_INVALID_ARGUMENT = 2,
  IS_STATUS_SHAPE = 3,
  IS_STATUS_NON_FINITE = 4,
  IS_STATUS_DEGENERATE = 5,
  IS_STATUS_IO = 6,
  IS_STATUS_FORMAT = 7,
  IS_STATUS_CONFIG = 8,
  IS_STATUS_DIVERGED = 9,
  IS_STATUS_PANIC = 10,
} IsStatus;

/**
 * Opaque dataset handle.
 */
typedef struct IsDataset IsDataset;

/**
 * Opaque trainer handle. It owns a copy of its dataset, so the dataset
 * handle may be freed independently.
 */
typedef struct IsTrainer IsTrainer;

/**
 * One iteration's metrics. Absent optional values are NaN.
 */
typedef struct IsStepMetrics {
  uint64_t iteration;
  double epoch;
  double batch_loss;
  double ema_loss;
  double var_trace;
  double max_loss;
  double tracking_a;
  double tracking_b;
  double smoothing_c;
} IsStepMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next `is_*` call on this thread.
 */
const char *is_last_error_message(void);

/**
 * Gaussian-blob classification set; `hard_fraction` of each class is moved
 * to a rare cluster.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum IsStatus is_dataset_synthetic(size_t n,
                                   size_t dims,
                                   size_t classes,
                                   double noise,
                                   double hard_fraction,
                                   uint64_t seed,
                                   struct IsDataset **out);

/**
 * Loads an IDX image/label pair.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum IsStatus is_dataset_from_idx(const char *images_path,
                                  const char *labels_path,
                                  struct IsDataset **out);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t is_dataset_len(const struct IsDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void is_dataset_free(struct IsDataset *dataset);

/**
 * Creates a trainer. `config_toml` holds training keys such as
 * `strategy = "loss"` and `k = 0.5`; null means all defaults.
 *
 * # Safety
 * `dataset` must be a live handle, `config_toml` null or NUL-terminated,
 * `out` writable.
 */
enum IsStatus is_trainer_new(const struct IsDataset *dataset,
                             const char *config_toml,
                             struct IsTrainer **out);

/**
 * Runs one iteration. `metrics` may be null.
 *
 * # Safety
 * `trainer` must be a live handle; `metrics` null or writable.
 */
enum IsStatus is_trainer_step(struct IsTrainer *trainer, struct IsStepMetrics *metrics);

/**
 * Number of model parameters, 0 for a null handle.
 *
 * # Safety
 * `trainer` must be null or a live handle.
 */
size_t is_trainer_num_params(const struct IsTrainer *trainer);

/**
 * Copies the flat parameter vector into `out`, which must hold exactly
 * `is_trainer_num_params` values.
 *
 * # Safety
 * `trainer` must be a live handle and `out` valid for `len` writes.
 */
enum IsStatus is_trainer_params(const struct IsTrainer *trainer, double *out, size_t len);

/**
 * # Safety
 * `trainer` must be null or a handle not yet freed.
 */
void is_trainer_free(struct IsTrainer *trainer);

/**
 * Sampling probabilities `(s_i + c) / Σ_j (s_j + c)` over `n` scores.
 *
 * # Safety
 * `scores` and `probs_out` must be valid for `n` elements.
 */
enum IsStatus is_importance_probs(const double *scores,
                                  size_t n,
                                  double smoothing,
                                  double *probs_out);

/**
 * Correction weights `1 / (n p^k)` for the pool positions in `chosen`.
 *
 * # Safety
 * `scores` must be valid for `n`, `chosen` and `weights_out` for `m`.
 */
enum IsStatus is_biased_weights(const double *scores,
                                size_t n,
                                double smoothing,
                                const size_t *chosen,
                                size_t m,
                                double k,
                                double *weights_out);

/**
 * Least-squares fit `actual ≈ a · predicted + b`.
 *
 * # Safety
 * Arrays must be valid for `n` elements; `a` and `b` writable.
 */
enum IsStatus is_tracking_coefficients(const double *predicted,
                                       const double *actual,
                                       size_t n,
                                       double *a,
                                       double *b);

/**
 * Runs a TOML experiment. `all_completed` (may be null) receives 1 when no
 * run aborted. Aborted runs do not make the call fail.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `all_completed` null or writable.
 */
enum IsStatus is_run_experiment(const char *config_path, int32_t *all_completed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISAMPLE_H */
