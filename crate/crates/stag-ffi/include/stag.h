#ifndef STAG_H
#define STAG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call in this API.
 */
typedef enum {
  /**
   * The call succeeded.
   */
  STAG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  STAG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A path or string argument was not valid UTF-8.
   */
  STAG_STATUS_INVALID_UTF8 = 2,
  /**
   * The operating system reported an I/O failure.
   */
  STAG_STATUS_IO = 3,
  /**
   * A file or argument was structurally invalid (bad magic, wrong
   * version, shape mismatch, unknown field).
   */
  STAG_STATUS_BAD_DATA = 4,
  /**
   * A numerical invariant failed during computation.
   */
  STAG_STATUS_NUMERICAL = 5,
  /**
   * The caller's output buffer is smaller than the result.
   */
  STAG_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * An internal invariant failed; the handle is still valid.
   */
  STAG_STATUS_INTERNAL = 7,
} StagStatus;

/**
 * A loaded aggregation model: pipeline configuration plus fitted tensors
 * for one emotion.
 */
typedef struct StagModel StagModel;

/**
 * A trained linear SVM for one emotion.
 */
typedef struct StagSvm StagSvm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread. Never null.
 */
const char *stag_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *stag_version(void);

/**
 * Loads an aggregation model written by `stag train`. On success stores a
 * handle in `out`; release it with `stag_model_free`.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must point to writable memory.
 */
StagStatus stag_model_load(const char *path, StagModel **out);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from `stag_model_load` and not be freed twice.
 */
void stag_model_free(StagModel *model);

/**
 * Length of the representation vector this model produces.
 *
 * # Safety
 * Both pointers must be valid.
 */
StagStatus stag_model_output_dim(const StagModel *model, size_t *out);

/**
 * Emotion this model was trained for, as a static lowercase string.
 * Returns null only for a null handle.
 *
 * # Safety
 * `model` must be valid if non-null.
 */
const char *stag_model_emotion(const StagModel *model);

/**
 * Encodes one feature file into the model's video representation. `out`
 * must hold at least `stag_model_output_dim` values; `written` receives
 * the number of values stored.
 *
 * # Safety
 * All pointers must be valid and `out` must have capacity `out_cap`.
 */
StagStatus stag_encode_feature_file(const StagModel *model,
                                    const char *features_path,
                                    double *out,
                                    size_t out_cap,
                                    size_t *written);

/**
 * Loads an SVM written by `stag train`. Release with `stag_svm_free`.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must point to writable memory.
 */
StagStatus stag_svm_load(const char *path, StagSvm **out);

/**
 * Releases an SVM handle. Null is a no-op.
 *
 * # Safety
 * `svm` must come from `stag_svm_load` and not be freed twice.
 */
void stag_svm_free(StagSvm *svm);

/**
 * Feature dimension the SVM expects.
 *
 * # Safety
 * Both pointers must be valid.
 */
StagStatus stag_svm_dim(const StagSvm *svm, size_t *out);

/**
 * Signed distance of `features` from the decision boundary. Positive
 * margins mean the genuine class.
 *
 * # Safety
 * `features` must point to `len` readable values; other pointers valid.
 */
StagStatus stag_svm_margin(const StagSvm *svm, const double *features, size_t len, double *out);

/**
 * Hard decision for `features`: 1 for the genuine class, 0 for the posed
 * class.
 *
 * # Safety
 * `features` must point to `len` readable values; other pointers valid.
 */
StagStatus stag_svm_predict(const StagSvm *svm, const double *features, size_t len, int32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STAG_H */
