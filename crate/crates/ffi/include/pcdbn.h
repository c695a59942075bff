#ifndef PCDBN_H
#define PCDBN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PcdbnStatus {
  PCDBN_STATUS_OK = 0,
  PCDBN_STATUS_NULL_POINTER = 1,
  PCDBN_STATUS_INVALID_ARGUMENT = 2,
  PCDBN_STATUS_DATA_ERROR = 3,
  PCDBN_STATUS_TRAINING_ERROR = 4,
  PCDBN_STATUS_BUFFER_TOO_SMALL = 5,
  PCDBN_STATUS_PANIC = 6,
} PcdbnStatus;

/**
 * Trained model handle.
 */
typedef struct PcdbnModel PcdbnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (NUL-terminated, truncated to `len`) into
 * `buf` and returns the full message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pcdbn_last_error(char *buf, size_t len);

/**
 * Power-basis coefficients `α_0..α_L` of the logistic's degree-`L` Chebyshev
 * truncation. `out` must hold `l + 1` values.
 *
 * # Safety
 * `out` must be valid for `out_len` writes.
 */
enum PcdbnStatus pcdbn_chebyshev_coefficients(size_t l, double *out, size_t out_len);

/**
 * Fills `out[0..n]` with Laplace(0, `scale`) draws from a ChaCha20 stream seeded by `seed`.
 *
 * # Safety
 * `out` must be valid for `n` writes.
 */
enum PcdbnStatus pcdbn_laplace(double scale, uint64_t seed, double *out, size_t n);

/**
 * Kolmogorov-Smirnov self-test of `n` draws at scale `delta/epsilon`.
 *
 * # Safety
 * `statistic` and `p_value` must be valid for writes.
 */
enum PcdbnStatus pcdbn_noise_test(double epsilon,
                                  double delta,
                                  size_t n,
                                  uint64_t seed,
                                  double *statistic,
                                  double *p_value);

/**
 * Trains from a `key = value` config file, as `pcdbn train` does, and
 * stores a new handle in `*out`.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum PcdbnStatus pcdbn_train(const char *config, uint64_t seed, struct PcdbnModel **out);

/**
 * Loads a model container and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum PcdbnStatus pcdbn_model_load(const char *path, struct PcdbnModel **out);

/**
 * Writes a model container.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum PcdbnStatus pcdbn_model_save(const struct PcdbnModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void pcdbn_model_free(struct PcdbnModel *model);

/**
 * Side length of the square inputs the model expects.
 *
 * # Safety
 * `model` must come from this library; `side` must be valid for a write.
 */
enum PcdbnStatus pcdbn_model_input_side(const struct PcdbnModel *model, size_t *side);

/**
 * Total privacy budget recorded in the model's ledger.
 *
 * # Safety
 * `model` must come from this library; `epsilon` must be valid for a write.
 */
enum PcdbnStatus pcdbn_model_epsilon_spent(const struct PcdbnModel *model, double *epsilon);

/**
 * Predicts the label of one normalized `side×side` row-major image. `score`
 * receives `σ(w·p)` of the first binary problem (the positive-class
 * probability for two classes) and may be null.
 *
 * # Safety
 * `pixels` must be valid for `len` reads; `label` for a write; `score` null or valid.
 */
enum PcdbnStatus pcdbn_model_predict(const struct PcdbnModel *model,
                                     const double *pixels,
                                     size_t len,
                                     size_t *label,
                                     double *score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCDBN_H */
