#ifndef REGSEL_H
#define REGSEL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RegselStatus {
  REGSEL_STATUS_OK = 0,
  REGSEL_STATUS_NULL_POINTER = 1,
  REGSEL_STATUS_INVALID_ARGUMENT = 2,
  REGSEL_STATUS_DATA_ERROR = 3,
  REGSEL_STATUS_SOLVER_ERROR = 4,
  REGSEL_STATUS_IO_ERROR = 5,
  REGSEL_STATUS_PANIC = 6,
} RegselStatus;

typedef enum RegselPenalty {
  REGSEL_PENALTY_L1 = 0,
  REGSEL_PENALTY_L2 = 1,
} RegselPenalty;

typedef enum RegselAggregation {
  REGSEL_AGGREGATION_MEAN_ABS = 0,
  REGSEL_AGGREGATION_MAX_ABS = 1,
  REGSEL_AGGREGATION_L2_NORM = 2,
  REGSEL_AGGREGATION_MAX_SIGNED = 3,
} RegselAggregation;

// Labelled feature matrix.
typedef struct RegselDataset RegselDataset;

// Fitted random forest.
typedef struct RegselForest RegselForest;

// Fitted multinomial logistic regression.
typedef struct RegselModel RegselModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *regsel_last_error_message(void);

// Library version as a static string.
const char *regsel_version(void);

// Loads and cleans a CSV export. `drop_columns` may be null when
// `n_drop` is 0.
//
// # Safety
// String arguments must be nul-terminated; `drop_columns` must hold
// `n_drop` valid strings; `out` must be writable.
enum RegselStatus regsel_dataset_load_csv(const char *path,
                                          const char *label_column,
                                          const char *const *drop_columns,
                                          size_t n_drop,
                                          struct RegselDataset **out);

// Builds a dataset from a row-major `n_rows x n_cols` matrix and labels
// in `0..n_classes`. Features and classes get generic names.
//
// # Safety
// `x` must hold `n_rows * n_cols` values, `y` `n_rows` labels.
enum RegselStatus regsel_dataset_from_arrays(const double *x,
                                             size_t n_rows,
                                             size_t n_cols,
                                             const size_t *y,
                                             size_t n_classes,
                                             struct RegselDataset **out);

// Writes row, feature and class counts; any output pointer may be null.
//
// # Safety
// `ds` must be a live handle.
enum RegselStatus regsel_dataset_shape(const struct RegselDataset *ds,
                                       size_t *n_samples,
                                       size_t *n_features,
                                       size_t *n_classes);

// # Safety
// `ds` must be null or a handle not yet freed.
void regsel_dataset_free(struct RegselDataset *ds);

// Fits L1- or L2-penalized multinomial logistic regression on every
// feature with an automatic step size.
//
// # Safety
// `ds` must be a live handle and `out` writable.
enum RegselStatus regsel_logreg_fit(const struct RegselDataset *ds,
                                    enum RegselPenalty penalty,
                                    double c,
                                    size_t max_epochs,
                                    double tolerance,
                                    uint64_t seed,
                                    struct RegselModel **out);

// Number of classes and of input features the model expects.
//
// # Safety
// `model` must be a live handle; outputs may be null.
enum RegselStatus regsel_model_shape(const struct RegselModel *model,
                                     size_t *n_classes,
                                     size_t *n_features);

// Predicted labels for `n_rows` rows into `out_labels`.
//
// # Safety
// `x` must hold `n_rows * n_cols` values and `out_labels` `n_rows` slots.
enum RegselStatus regsel_model_predict(const struct RegselModel *model,
                                       const double *x,
                                       size_t n_rows,
                                       size_t n_cols,
                                       size_t *out_labels);

// Class probabilities, `n_rows x n_classes`, into `out`.
//
// # Safety
// `x` must hold `n_rows * n_cols` values and `out` `n_rows * n_classes`.
enum RegselStatus regsel_model_predict_proba(const struct RegselModel *model,
                                             const double *x,
                                             size_t n_rows,
                                             size_t n_cols,
                                             double *out);

// Coefficients, `n_classes x n_features`, into `out` of length `len`.
//
// # Safety
// `out` must hold `len` values.
enum RegselStatus regsel_model_coefficients(const struct RegselModel *model,
                                            double *out,
                                            size_t len);

// Feature indices ordered from most to least important.
//
// # Safety
// `out_order` must hold `len` slots, `len` equal to the feature count.
enum RegselStatus regsel_model_rank_features(const struct RegselModel *model,
                                             enum RegselAggregation aggregation,
                                             size_t *out_order,
                                             size_t len);

// # Safety
// `model` must be null or a handle not yet freed.
void regsel_model_free(struct RegselModel *model);

// Fits a bootstrap random forest of Gini trees. `max_depth` 0 means
// unlimited.
//
// # Safety
// `ds` must be a live handle and `out` writable.
enum RegselStatus regsel_forest_fit(const struct RegselDataset *ds,
                                    size_t n_trees,
                                    size_t max_depth,
                                    uint64_t seed,
                                    struct RegselForest **out);

// # Safety
// As for [`regsel_model_predict`].
enum RegselStatus regsel_forest_predict(const struct RegselForest *forest,
                                        const double *x,
                                        size_t n_rows,
                                        size_t n_cols,
                                        size_t *out_labels);

// # Safety
// `forest` must be null or a handle not yet freed.
void regsel_forest_free(struct RegselForest *forest);

// Confusion counts, `n_classes x n_classes` with actual classes as rows.
//
// # Safety
// Label arrays must hold `n` values, `out` `n_classes * n_classes`.
enum RegselStatus regsel_confusion(const size_t *y_true,
                                   const size_t *y_pred,
                                   size_t n,
                                   size_t n_classes,
                                   size_t *out);

// Fraction of matching labels; fails on empty input.
//
// # Safety
// Label arrays must hold `n` values and `out` be writable.
enum RegselStatus regsel_accuracy(const size_t *y_true,
                                  const size_t *y_pred,
                                  size_t n,
                                  double *out);

// Runs the full pipeline described by a JSON config and writes its
// reports. `output_dir` may be null to use the config's own.
//
// # Safety
// String arguments must be nul-terminated.
enum RegselStatus regsel_run_grid(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REGSEL_H */
