#ifndef PLNCF_H
#define PLNCF_H

/* Generated by cbindgen from the plncf-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum PlncfStatus {
  /**
   * Success.
   */
  PLNCF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  PLNCF_STATUS_NULL_POINTER = 1,
  /**
   * An argument failed validation (unknown name, bad index, bad shape).
   */
  PLNCF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Reading or writing a file failed.
   */
  PLNCF_STATUS_IO = 3,
  /**
   * A numeric routine failed or panicked.
   */
  PLNCF_STATUS_COMPUTE = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  PLNCF_STATUS_UTF8 = 5,
} PlncfStatus;

/**
 * Opaque handle over the synthetic survey dataset plus the per-user
 * feature vectors models consume.
 */
typedef struct PlncfDataset PlncfDataset;

/**
 * Opaque handle over one trained model.
 */
typedef struct PlncfModel PlncfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *plncf_version(void);

/**
 * Message describing the calling thread's most recent failure; empty when
 * no call on this thread has failed. The pointer stays valid until the
 * next failing call on the same thread.
 */
const char *plncf_last_error(void);

/**
 * Generate the canonical synthetic dataset (165 users, 498 groups) with
 * the given RNG seed and store a handle in `out`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PlncfStatus plncf_dataset_generate(uint64_t seed, struct PlncfDataset **out);

/**
 * Load a dataset bundle from a JSON file written by `plncf_dataset_save`
 * (or by the CLI's generate stage).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum PlncfStatus plncf_dataset_load(const char *path, struct PlncfDataset **out);

/**
 * Write the dataset bundle as JSON.
 *
 * # Safety
 * `dataset` must be a live handle; `path` must be a NUL-terminated string.
 */
enum PlncfStatus plncf_dataset_save(const struct PlncfDataset *dataset, const char *path);

/**
 * Report the dataset's user, group, and interaction counts. Any out
 * pointer may be NULL to skip that count.
 *
 * # Safety
 * `dataset` must be a live handle; non-NULL out pointers must be valid.
 */
enum PlncfStatus plncf_dataset_counts(const struct PlncfDataset *dataset,
                                      size_t *users,
                                      size_t *groups,
                                      size_t *interactions);

/**
 * Feature-alignment score `(cos(x, z) + 1) / 2` over two equal-length
 * vectors; always in [0, 1].
 *
 * # Safety
 * `x` and `z` must point to `x_len` / `z_len` readable doubles; `out` must
 * be a valid pointer.
 */
enum PlncfStatus plncf_align_features(const double *x,
                                      size_t x_len,
                                      const double *z,
                                      size_t z_len,
                                      double *out);

/**
 * Train one model on the dataset and store a handle in `out`.
 *
 * `arch` is one of `mf`, `mlp`, `neumf`, `mf_pl`, `mlp_pl`, `neumf_pl`
 * (case-insensitive, hyphens allowed); `protocol` is `loo` or `ratio`.
 * Published hyperparameters apply, with `epochs` and the pseudo-label
 * weight `lambda_pl` supplied by the caller. The split and all training
 * randomness derive from `seed`, so equal inputs give equal models.
 *
 * # Safety
 * `dataset` must be a live handle; `arch` and `protocol` must be
 * NUL-terminated strings; `out` must be a valid pointer.
 */
enum PlncfStatus plncf_model_train(const struct PlncfDataset *dataset,
                                   const char *arch,
                                   const char *protocol,
                                   uint64_t seed,
                                   uint32_t epochs,
                                   double lambda_pl,
                                   struct PlncfModel **out);

/**
 * Predicted membership score (sigmoid, in (0, 1)) for one (user, group)
 * pair, using the user's survey features from the dataset.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `out` must be valid.
 */
enum PlncfStatus plncf_model_score(const struct PlncfModel *model,
                                   const struct PlncfDataset *dataset,
                                   size_t user,
                                   size_t group,
                                   double *out);

/**
 * Number of trainable parameters in the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid.
 */
enum PlncfStatus plncf_model_num_params(const struct PlncfModel *model, size_t *out);

/**
 * Release a dataset handle. NULL is a no-op.
 *
 * # Safety
 * `dataset` must be NULL or a handle not freed before.
 */
void plncf_dataset_free(struct PlncfDataset *dataset);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a handle not freed before.
 */
void plncf_model_free(struct PlncfModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PLNCF_H */
