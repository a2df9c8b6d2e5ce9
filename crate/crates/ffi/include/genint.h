#ifndef GENINT_H
#define GENINT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum GenintStatus {
  GENINT_STATUS_OK = 0,
  GENINT_STATUS_NULL_ARGUMENT = 1,
  GENINT_STATUS_INVALID_ARGUMENT = 2,
  GENINT_STATUS_MISSING_DEPENDENCY = 3,
  GENINT_STATUS_IO = 4,
  GENINT_STATUS_FORMAT = 5,
  GENINT_STATUS_NUMERIC = 6,
  GENINT_STATUS_BUFFER_TOO_SMALL = 7,
  GENINT_STATUS_PANIC = 8,
} GenintStatus;

/**
 * A trained classifier loaded from a model directory.
 */
typedef struct GenintClassifier GenintClassifier;

/**
 * A configured experiment pipeline.
 */
typedef struct GenintPipeline GenintPipeline;

/**
 * An n-dimensional f32 array.
 */
typedef struct GenintTensor GenintTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *genint_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full length including the NUL, or 0 if
 * there is no error recorded.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t genint_last_error_message(char *buf, size_t cap);

/**
 * # Safety
 * `shape` must point to `ndim` values and `data` to their product.
 */
enum GenintStatus genint_tensor_new(const size_t *shape,
                                    size_t ndim,
                                    const float *data,
                                    struct GenintTensor **out_tensor);

/**
 * Reads a `.gint` tensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum GenintStatus genint_tensor_read(const char *path, struct GenintTensor **out_tensor);

/**
 * # Safety
 * `tensor` must come from this library; `path` must be a NUL-terminated string.
 */
enum GenintStatus genint_tensor_write(const struct GenintTensor *tensor, const char *path);

/**
 * Writes the rank to `out_ndim` and up to `cap` extents to `out_shape`.
 *
 * # Safety
 * `tensor` must come from this library; `out_shape` must hold `cap` values.
 */
enum GenintStatus genint_tensor_shape(const struct GenintTensor *tensor,
                                      size_t *out_shape,
                                      size_t cap,
                                      size_t *out_ndim);

/**
 * Copies the elements in row-major order; `cap` is in elements.
 *
 * # Safety
 * `tensor` must come from this library; `out_data` must hold `cap` floats.
 */
enum GenintStatus genint_tensor_copy_data(const struct GenintTensor *tensor,
                                          float *out_data,
                                          size_t cap);

/**
 * # Safety
 * `tensor` must be null or come from this library, and not be used afterwards.
 */
void genint_tensor_free(struct GenintTensor *tensor);

/**
 * Loads a classifier saved by the `train-classifier` stage.
 *
 * # Safety
 * `dir` must be a NUL-terminated string.
 */
enum GenintStatus genint_classifier_load(const char *dir, struct GenintClassifier **out_model);

/**
 * Flattened input width the classifier expects.
 *
 * # Safety
 * `model` must come from this library.
 */
enum GenintStatus genint_classifier_input_dim(const struct GenintClassifier *model,
                                              size_t *out_dim);

/**
 * Predicts a label for each of `n` rows of `input_dim` floats.
 *
 * # Safety
 * `images` must hold `n * input_dim` floats and `out_labels` `n` values.
 */
enum GenintStatus genint_classifier_predict(const struct GenintClassifier *model,
                                            const float *images,
                                            size_t n,
                                            size_t *out_labels);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used afterwards.
 */
void genint_classifier_free(struct GenintClassifier *model);

/**
 * Opens a pipeline from an INI file, or from defaults when `config_path` is
 * null. A non-null `out_dir` overrides the configured output directory.
 *
 * # Safety
 * Non-null strings must be NUL-terminated.
 */
enum GenintStatus genint_pipeline_open(const char *config_path,
                                       const char *out_dir,
                                       struct GenintPipeline **out_pipeline);

/**
 * # Safety
 * `pipeline` must come from this library.
 */
enum GenintStatus genint_pipeline_set_seed(struct GenintPipeline *pipeline, uint64_t seed);

/**
 * Runs a comma-separated stage list (`"run"` for all). Stages with current
 * stamps are skipped unless `force` is non-zero.
 *
 * # Safety
 * `pipeline` must come from this library; `stages` must be NUL-terminated.
 */
enum GenintStatus genint_pipeline_run(struct GenintPipeline *pipeline,
                                      const char *stages,
                                      int32_t force);

/**
 * # Safety
 * `pipeline` must be null or come from this library, and not be used afterwards.
 */
void genint_pipeline_free(struct GenintPipeline *pipeline);

/**
 * Bounds on P(y | do(x)) from P(y, x) and P(x).
 *
 * # Safety
 * Output pointers must be writable.
 */
enum GenintStatus genint_natural_bound(double p_xy,
                                       double p_x,
                                       double *out_lower,
                                       double *out_upper);

/**
 * Bounds on P(y | do(x)) from P(y, x | z) and P(x | z) under an exogenous Z.
 *
 * # Safety
 * Output pointers must be writable.
 */
enum GenintStatus genint_intervened_bound(double p_yx_given_z,
                                          double p_x_given_z,
                                          double *out_lower,
                                          double *out_upper);

/**
 * `cov(z, y) / cov(z, x)` over `n` samples.
 *
 * # Safety
 * `z`, `x`, `y` must each hold `n` values.
 */
enum GenintStatus genint_linear_iv_estimate(const double *z,
                                            const double *x,
                                            const double *y,
                                            size_t n,
                                            double *out_effect);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENINT_H */
