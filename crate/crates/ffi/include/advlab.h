/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ADVLAB_H
#define ADVLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdvlabStatus {
  ADVLAB_STATUS_OK = 0,
  ADVLAB_STATUS_NULL_POINTER = 1,
  ADVLAB_STATUS_INVALID_ARGUMENT = 2,
  ADVLAB_STATUS_IO = 3,
  ADVLAB_STATUS_FORMAT = 4,
  ADVLAB_STATUS_SHAPE = 5,
  ADVLAB_STATUS_PANIC = 6,
} AdvlabStatus;

/**
 * Opaque model handle.
 */
typedef struct AdvlabModel AdvlabModel;

/**
 * PGD settings; `alpha <= 0` selects the default step `2.5 * epsilon / steps`.
 */
typedef struct AdvlabAttackConfig {
  double epsilon;
  double alpha;
  size_t steps;
  bool random_start;
  uint64_t seed;
} AdvlabAttackConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *advlab_last_error_message(void);

/**
 * Loads a checkpoint written by `advlab train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AdvlabStatus advlab_model_load(const char *path, struct AdvlabModel **out);

/**
 * Writes the model as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum AdvlabStatus advlab_model_save(const struct AdvlabModel *model, const char *path);

/**
 * Fresh Glorot-initialised classifier with `n_hidden` hidden layers and
 * `k` outputs (no operation head).
 *
 * # Safety
 * `hidden` must point to `n_hidden` widths (may be NULL when 0); `out`
 * must be writable.
 */
enum AdvlabStatus advlab_model_init(size_t input_dim,
                                    const size_t *hidden,
                                    size_t n_hidden,
                                    size_t k,
                                    uint64_t seed,
                                    struct AdvlabModel **out);

/**
 * Releases a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void advlab_model_free(struct AdvlabModel *model);

/**
 * Input dimension and number of content classes.
 *
 * # Safety
 * `model` must be valid; output pointers must be writable.
 */
enum AdvlabStatus advlab_model_shape(const struct AdvlabModel *model, size_t *input_dim, size_t *k);

/**
 * Predicted content class of each of the `n` rows of `x`.
 *
 * # Safety
 * `x` must hold `n * d` values and `out` room for `n` labels.
 */
enum AdvlabStatus advlab_predict(const struct AdvlabModel *model,
                                 const double *x,
                                 size_t n,
                                 size_t d,
                                 size_t *out);

/**
 * FGSM with budget `epsilon`; writes the `n * d` adversarial inputs.
 *
 * # Safety
 * `x` and `out` must hold `n * d` values, `labels` `n` labels.
 */
enum AdvlabStatus advlab_fgsm(const struct AdvlabModel *model,
                              const double *x,
                              const size_t *labels,
                              size_t n,
                              size_t d,
                              double epsilon,
                              double *out);

/**
 * ℓ∞ PGD; writes the `n * d` adversarial inputs.
 *
 * # Safety
 * `x` and `out` must hold `n * d` values, `labels` `n` labels; `config`
 * must be valid.
 */
enum AdvlabStatus advlab_pgd(const struct AdvlabModel *model,
                             const double *x,
                             const size_t *labels,
                             size_t n,
                             size_t d,
                             const struct AdvlabAttackConfig *config,
                             double *out);

/**
 * `100 (before - after) / before`, unrounded and rounded half-up to two
 * decimals. Either output may be NULL.
 *
 * # Safety
 * Non-NULL outputs must be writable.
 */
enum AdvlabStatus advlab_relative_change(double before,
                                         double after,
                                         double *value,
                                         double *rounded);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVLAB_H */
