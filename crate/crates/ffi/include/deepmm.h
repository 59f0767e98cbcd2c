#ifndef DEEPMM_H
#define DEEPMM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Gradient-check scope for [`deepmm_gradcheck`].
 */
typedef enum {
  DEEPMM_SCOPE_LAYERS = 0,
  DEEPMM_SCOPE_ATTENTION = 1,
  DEEPMM_SCOPE_FULL = 2,
} DeepmmScope;

/**
 * Status codes. Values match the command-line exit codes where both exist.
 */
typedef enum {
  DEEPMM_STATUS_OK = 0,
  DEEPMM_STATUS_CHECK_FAILED = 1,
  DEEPMM_STATUS_CONFIG = 2,
  DEEPMM_STATUS_DATA = 3,
  DEEPMM_STATUS_NUMERIC = 4,
  DEEPMM_STATUS_IO = 5,
  DEEPMM_STATUS_SHAPE = 6,
  DEEPMM_STATUS_NULL_POINTER = 7,
  DEEPMM_STATUS_INVALID_STRING = 8,
  DEEPMM_STATUS_PANIC = 9,
} DeepmmStatus;

/**
 * An in-memory feature dataset.
 */
typedef struct DeepmmDataset DeepmmDataset;

/**
 * A trained or freshly initialized network.
 */
typedef struct DeepmmModel DeepmmModel;

/**
 * Widths a caller needs to size prediction buffers.
 */
typedef struct {
  size_t d_img;
  size_t d_obj;
  size_t d_word;
  size_t n_topics;
  size_t n_sentiments;
  size_t parameter_count;
} DeepmmModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *deepmm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *deepmm_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void deepmm_string_free(char *s);

/**
 * Builds a freshly initialized model from a JSON model configuration.
 * Missing fields take their defaults; null means all defaults.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is writable.
 */
DeepmmStatus deepmm_model_new(const char *config_json, uint64_t seed, DeepmmModel **out);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
DeepmmStatus deepmm_model_load(const char *path, DeepmmModel **out);

/**
 * Writes the model as a checkpoint without training state.
 *
 * # Safety
 * `model` is a live handle; `path` is a NUL-terminated string.
 */
DeepmmStatus deepmm_model_save(const DeepmmModel *model, const char *path);

/**
 * # Safety
 * `model` is a live handle; `out` is writable.
 */
DeepmmStatus deepmm_model_info(const DeepmmModel *model, DeepmmModelInfo *out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` comes from this library and has not been freed.
 */
void deepmm_model_free(DeepmmModel *model);

/**
 * Eval-mode probabilities for one record.
 *
 * `global` holds `d_img` values, `objects` is `n_objects x d_obj` and
 * `words` is `n_words x d_word`, both row-major; either may be null when
 * its count is 0. `topic_out` and `sentiment_out` must hold `n_topics` and
 * `n_sentiments` values; their capacities are checked.
 *
 * # Safety
 * All buffers are valid for the stated lengths.
 */
DeepmmStatus deepmm_model_predict(const DeepmmModel *model,
                                  const double *global,
                                  const double *objects,
                                  size_t n_objects,
                                  const double *words,
                                  size_t n_words,
                                  double *topic_out,
                                  size_t topic_capacity,
                                  double *sentiment_out,
                                  size_t sentiment_capacity);

/**
 * Loads a JSON-lines dataset (gzip when the name ends in `.gz`).
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
DeepmmStatus deepmm_dataset_load(const char *path, DeepmmDataset **out);

/**
 * Number of records; 0 for null.
 *
 * # Safety
 * `dataset` is null or a live handle.
 */
size_t deepmm_dataset_len(const DeepmmDataset *dataset);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` comes from this library and has not been freed.
 */
void deepmm_dataset_free(DeepmmDataset *dataset);

/**
 * Evaluates `model` on every record of `dataset` and returns the report
 * as JSON (`{"topic": {...}, "sentiment": {...}}`), to be released with
 * [`deepmm_string_free`].
 *
 * # Safety
 * Handles are live; `out_json` is writable.
 */
DeepmmStatus deepmm_evaluate(const DeepmmModel *model,
                             const DeepmmDataset *dataset,
                             double threshold,
                             char **out_json);

/**
 * Writes a synthetic planted dataset. `config_json` is a synth
 * configuration (null for defaults).
 *
 * # Safety
 * `config_json` is null or NUL-terminated; `path` is NUL-terminated.
 */
DeepmmStatus deepmm_synth_write(const char *config_json, const char *path);

/**
 * Runs the canned gradient check for `scope`. Returns `CheckFailed` when
 * the check runs but exceeds its tolerance; `max_rel_error` may be null.
 *
 * # Safety
 * `max_rel_error` is null or writable.
 */
DeepmmStatus deepmm_gradcheck(DeepmmScope scope, uint64_t seed, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPMM_H */
