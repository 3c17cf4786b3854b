#ifndef FAIRINFL_H
#define FAIRINFL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FiStatus {
  FI_STATUS_OK = 0,
  FI_STATUS_NULL_POINTER = 1,
  FI_STATUS_INVALID_ARGUMENT = 2,
  FI_STATUS_SHAPE = 3,
  FI_STATUS_IO = 4,
  FI_STATUS_PARSE = 5,
  FI_STATUS_EMPTY_CELL = 6,
  FI_STATUS_NON_FINITE = 7,
  FI_STATUS_DEGENERATE = 8,
  FI_STATUS_PANIC = 9,
} FiStatus;

/**
 * Opaque dataset handle.
 */
typedef struct FiDataset FiDataset;

/**
 * Opaque model snapshot handle.
 */
typedef struct FiSnapshot FiSnapshot;

/**
 * Training options; obtain defaults from [`fi_train_options_default`].
 */
typedef struct FiTrainOptions {
  double learning_rate;
  size_t epochs;
  /**
   * 0 means full batch.
   */
  size_t batch_size;
  /**
   * 0 trains the affine model.
   */
  size_t hidden;
  double lambda;
  uint64_t seed;
} FiTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next `fi_*` call on the same thread.
 */
const char *fi_last_error(void);

/**
 * Builds a dataset from row-major `n x d` features, labels in {-1, +1} and
 * group ids.
 *
 * # Safety
 * `features` must point to `n * d` doubles, `labels` and `groups` to `n`
 * values each, `out` to writable storage for one handle.
 */
enum FiStatus fi_dataset_new(const double *features,
                             size_t n,
                             size_t d,
                             const int8_t *labels,
                             const uint32_t *groups,
                             struct FiDataset **out);

/**
 * Loads a `feature_0..,label,group` CSV.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum FiStatus fi_dataset_load_csv(const char *path, bool coerce_labels, struct FiDataset **out);

/**
 * One-dimensional Gaussian cells with the default ordered means.
 *
 * # Safety
 * `out` must be writable.
 */
enum FiStatus fi_dataset_synthetic(size_t n_per_cell, uint64_t seed, struct FiDataset **out);

/**
 * The census-style tabular stand-in.
 *
 * # Safety
 * `out` must be writable.
 */
enum FiStatus fi_dataset_tabular(size_t n_per_cell,
                                 size_t dim,
                                 uint64_t seed,
                                 struct FiDataset **out);

/**
 * Random split into a training part of `floor(n * train_fraction)` rows and the rest.
 *
 * # Safety
 * `data` must be a live handle; both outputs writable.
 */
enum FiStatus fi_dataset_split(const struct FiDataset *data,
                               double train_fraction,
                               uint64_t seed,
                               struct FiDataset **out_train,
                               struct FiDataset **out_test);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t fi_dataset_len(const struct FiDataset *data);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t fi_dataset_dim(const struct FiDataset *data);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void fi_dataset_free(struct FiDataset *data);

struct FiTrainOptions fi_train_options_default(void);

/**
 * Trains with Adam. `surrogate` may be null for unregularized training,
 * otherwise one of "dp", "tpr", "fpr", "eo", "cov", "mine".
 *
 * # Safety
 * `data` and `options` must be valid, `surrogate` null or nul-terminated,
 * `out` writable.
 */
enum FiStatus fi_train(const struct FiDataset *data,
                       const struct FiTrainOptions *options,
                       const char *surrogate,
                       struct FiSnapshot **out);

/**
 * Snapshot from flat parameters. `hidden = 0` selects the affine model
 * (`w`, then `b`); otherwise the layout is `W1` row-major, `b1`, `W2`, `b2`.
 *
 * # Safety
 * `values` must point to `len` doubles and `out` be writable.
 */
enum FiStatus fi_snapshot_from_params(size_t input_dim,
                                      size_t hidden,
                                      const double *values,
                                      size_t len,
                                      struct FiSnapshot **out);

/**
 * Parameter count, or 0 for a null handle.
 *
 * # Safety
 * `snapshot` must be null or a live handle.
 */
size_t fi_snapshot_num_params(const struct FiSnapshot *snapshot);

/**
 * Copies the flat parameters into `out` (capacity `len`, must equal the parameter count).
 *
 * # Safety
 * `snapshot` live, `out` writable for `len` doubles.
 */
enum FiStatus fi_snapshot_params(const struct FiSnapshot *snapshot, double *out, size_t len);

/**
 * # Safety
 * `snapshot` must be null or a handle not yet freed.
 */
void fi_snapshot_free(struct FiSnapshot *snapshot);

/**
 * Model output `f(x)`.
 *
 * # Safety
 * `x` must point to `d` doubles and `out` be writable.
 */
enum FiStatus fi_forward(const struct FiSnapshot *snapshot, const double *x, size_t d, double *out);

/**
 * Gradient of `f(x)` with respect to the flat parameters.
 *
 * # Safety
 * `x` must point to `d` doubles, `out` to `len` writable doubles.
 */
enum FiStatus fi_output_gradient(const struct FiSnapshot *snapshot,
                                 const double *x,
                                 size_t d,
                                 double *out,
                                 size_t len);

/**
 * Empirical NTK between two inputs.
 *
 * # Safety
 * `xi` and `xj` must each point to `d` doubles, `out` writable.
 */
enum FiStatus fi_ntk(const struct FiSnapshot *snapshot,
                     const double *xi,
                     const double *xj,
                     size_t d,
                     double *out);

/**
 * Aggregated fairness score and loss influence of every row of `data`.
 * The surrogate is resolved at `snapshot` over `data`; `n` in the step
 * weight is the dataset size.
 *
 * # Safety
 * Handles live, `surrogate` nul-terminated, both outputs writable for `len`
 * doubles where `len` equals the dataset size.
 */
enum FiStatus fi_aggregated_scores(const struct FiSnapshot *snapshot,
                                   const struct FiDataset *data,
                                   const char *surrogate,
                                   double eta,
                                   double lambda,
                                   double *out_fairness,
                                   double *out_loss,
                                   size_t len);

/**
 * Pearson correlation between predicted and actual output changes over
 * `pairs` random (train, target) pairs. `surrogate` may be null.
 *
 * # Safety
 * Handles live, `surrogate` null or nul-terminated, `out` writable.
 */
enum FiStatus fi_verify(const struct FiSnapshot *snapshot,
                        const struct FiDataset *train,
                        const struct FiDataset *targets,
                        const char *surrogate,
                        double eta,
                        double lambda,
                        size_t pairs,
                        uint64_t seed,
                        double *out);

/**
 * Fraction of rows whose predicted label matches.
 *
 * # Safety
 * Handles live, `out` writable.
 */
enum FiStatus fi_accuracy(const struct FiSnapshot *snapshot,
                          const struct FiDataset *data,
                          double *out);

/**
 * Largest acceptance-rate gap between groups.
 *
 * # Safety
 * Handles live, `out` writable.
 */
enum FiStatus fi_fairness_violation(const struct FiSnapshot *snapshot,
                                    const struct FiDataset *data,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRINFL_H */
