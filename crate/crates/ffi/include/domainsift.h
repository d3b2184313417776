#ifndef DOMAINSIFT_H
#define DOMAINSIFT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_UTF8 = 2,
  DS_STATUS_IO = 3,
  DS_STATUS_PARSE = 4,
  DS_STATUS_CHECKPOINT = 5,
  DS_STATUS_SHAPE = 6,
  DS_STATUS_CONFIG = 7,
  DS_STATUS_ARGUMENT = 8,
  DS_STATUS_DIVERGENCE = 9,
  DS_STATUS_PANIC = 10,
} DsStatus;

// A frozen language model.
typedef struct DsModel DsModel;

// A tuned domain prefix.
typedef struct DsPrefix DsPrefix;

// Score of one text: log-likelihoods with and without the prefix, in nats.
typedef struct DsScore {
  double log_p_base;
  double log_p_cond;
  double log_ratio;
  size_t tokens_scored;
  // Whether the text was cut at the model's context length.
  bool truncated;
  // `log_ratio > ln(tau)`.
  bool selected;
} DsScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *ds_last_error(void);

// Library version as a static NUL-terminated string.
const char *ds_version(void);

// Loads a model checkpoint into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_model_load(const char *path, struct DsModel **out);

// # Safety
// `model` must come from [`ds_model_load`] and not be freed twice. NULL is
// ignored.
void ds_model_free(struct DsModel *model);

// Parameter count of a model, or 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t ds_model_num_params(const struct DsModel *model);

// Loads a prefix checkpoint into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_prefix_load(const char *path, struct DsPrefix **out);

// # Safety
// `prefix` must come from [`ds_prefix_load`] and not be freed twice. NULL
// is ignored.
void ds_prefix_free(struct DsPrefix *prefix);

// Log-likelihood in nats of `len` bytes of text (BOS … EOS), conditioned on
// `prefix` when it is non-NULL.
//
// # Safety
// `model` must be a live handle, `prefix` NULL or a live handle, `text`
// readable for `len` bytes and `out` a valid pointer.
enum DsStatus ds_log_likelihood(const struct DsModel *model,
                                const struct DsPrefix *prefix,
                                const uint8_t *text,
                                size_t len,
                                double *out);

// Scores one text against the prefix and applies threshold `tau`.
//
// # Safety
// `model` and `prefix` must be live handles, `text` readable for `len`
// bytes and `out` a valid pointer.
enum DsStatus ds_score(const struct DsModel *model,
                       const struct DsPrefix *prefix,
                       const uint8_t *text,
                       size_t len,
                       double tau,
                       struct DsScore *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMAINSIFT_H */
