#ifndef SSVEPKIT_H
#define SSVEPKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome; non-zero means the out-parameters were not written.
 */
typedef enum SsvepStatus {
  SsvepStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  SsvepStatus_NullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SsvepStatus_InvalidUtf8 = 2,
  /**
   * The checkpoint could not be read.
   */
  SsvepStatus_IoError = 3,
  /**
   * The checkpoint bytes are malformed.
   */
  SsvepStatus_FormatError = 4,
  /**
   * A buffer length disagrees with the model geometry.
   */
  SsvepStatus_InvalidInput = 5,
  /**
   * Unexpected internal failure.
   */
  SsvepStatus_InternalError = 6,
} SsvepStatus;

/**
 * Opaque loaded model; create with `ssvep_model_load`, release with
 * `ssvep_model_free`.
 */
typedef struct SsvepModel SsvepModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *ssvep_status_message(enum SsvepStatus status);

/**
 * Loads a checkpoint file into a fresh handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * storage for one pointer.
 */
enum SsvepStatus ssvep_model_load(const char *path, struct SsvepModel **out);

/**
 * Releases a handle; a null pointer is a no-op.
 *
 * # Safety
 * `model` must have come from `ssvep_model_load` and not be used again.
 */
void ssvep_model_free(struct SsvepModel *model);

/**
 * Expected channels per trial; 0 if `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t ssvep_model_n_channels(const struct SsvepModel *model);

/**
 * Expected samples per channel; 0 if `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t ssvep_model_n_samples(const struct SsvepModel *model);

/**
 * Number of output classes; 0 if `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t ssvep_model_n_classes(const struct SsvepModel *model);

/**
 * Trainable parameter count; 0 if `model` is null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint64_t ssvep_model_param_count(const struct SsvepModel *model);

/**
 * Classifies one trial of `n_channels * n_samples` channel-major values.
 *
 * # Safety
 * `data` must point to `len` readable doubles; `out_class` must be
 * writable.
 */
enum SsvepStatus ssvep_model_predict(const struct SsvepModel *model,
                                     const double *data,
                                     uintptr_t len,
                                     uint32_t *out_class);

/**
 * Writes the per-class probability row for one trial.
 *
 * # Safety
 * `data` must point to `len` readable doubles; `out_probs` must hold
 * `probs_len` writable doubles, with `probs_len == n_classes`.
 */
enum SsvepStatus ssvep_model_predict_proba(const struct SsvepModel *model,
                                           const double *data,
                                           uintptr_t len,
                                           double *out_probs,
                                           uintptr_t probs_len);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SSVEPKIT_H */
