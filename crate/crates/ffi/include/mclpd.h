#ifndef MCLPD_H
#define MCLPD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call.
 */
typedef enum MclpdStatus {
  MCLPD_STATUS_OK = 0,
  MCLPD_STATUS_NULL_POINTER = 1,
  MCLPD_STATUS_INVALID_INPUT = 2,
  MCLPD_STATUS_IO = 3,
  MCLPD_STATUS_CORRUPT = 4,
  MCLPD_STATUS_CONFIG = 5,
  MCLPD_STATUS_TRAINING = 6,
  MCLPD_STATUS_PANIC = 7,
} MclpdStatus;

/**
 * A resolved run configuration.
 */
typedef struct MclpdConfig MclpdConfig;

/**
 * An epoch set: `[n_epochs x n_channels x n_samples]` plus metadata.
 */
typedef struct MclpdEpochs MclpdEpochs;

/**
 * Encoder, projection heads and classifier parameters.
 */
typedef struct MclpdModel MclpdModel;

/**
 * Binary classification metrics; class 1 is positive.
 */
typedef struct MclpdMetrics {
  double accuracy;
  double f1;
  double precision;
  double recall;
} MclpdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mclpd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mclpd_version(void);

/**
 * Default configuration with the given seed.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MclpdStatus mclpd_config_default(uint64_t seed, struct MclpdConfig **out_cfg);

/**
 * Parse and validate a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out_cfg` a valid pointer.
 */
enum MclpdStatus mclpd_config_from_toml(const char *toml, struct MclpdConfig **out_cfg);

/**
 * Set the fraction of labeled epochs used for fine-tuning.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum MclpdStatus mclpd_config_set_label_fraction(struct MclpdConfig *cfg, double fraction);

/**
 * # Safety
 * `cfg` must be null or a handle from this library, freed at most once.
 */
void mclpd_config_free(struct MclpdConfig *cfg);

/**
 * Copy a contiguous `[n_epochs x n_channels x n_samples]` array into a new
 * epoch set. `labels` may be null; `subject_ids` may be null (all zero).
 * Channels are named after the standard montage.
 *
 * # Safety
 * `data` must point to `n_epochs * n_channels * n_samples` doubles, `labels`
 * and `subject_ids` (when non-null) to `n_epochs` values each.
 */
enum MclpdStatus mclpd_epochs_from_array(const double *data,
                                         size_t n_epochs,
                                         size_t n_channels,
                                         size_t n_samples,
                                         double fs,
                                         const uint8_t *labels,
                                         const uint32_t *subject_ids,
                                         struct MclpdEpochs **out_set);

/**
 * Generate a synthetic labeled set. `site` is `siteA`, `siteB` or `siteC`.
 *
 * # Safety
 * `site` must be a NUL-terminated string and `out_set` a valid pointer.
 */
enum MclpdStatus mclpd_epochs_synth(const char *site,
                                    size_t subjects_per_class,
                                    size_t epochs_per_subject,
                                    uint64_t seed,
                                    struct MclpdEpochs **out_set);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_set` a valid pointer.
 */
enum MclpdStatus mclpd_epochs_load(const char *path, struct MclpdEpochs **out_set);

/**
 * # Safety
 * `set` must be a live handle and `path` a NUL-terminated string.
 */
enum MclpdStatus mclpd_epochs_save(const struct MclpdEpochs *set, const char *path);

/**
 * Write the dimensions of `set`. Any output pointer may be null.
 *
 * # Safety
 * `set` must be a live handle; non-null outputs must be valid.
 */
enum MclpdStatus mclpd_epochs_shape(const struct MclpdEpochs *set,
                                    size_t *n_epochs,
                                    size_t *n_channels,
                                    size_t *n_samples);

/**
 * # Safety
 * `set` must be null or a handle from this library, freed at most once.
 */
void mclpd_epochs_free(struct MclpdEpochs *set);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid pointer.
 */
enum MclpdStatus mclpd_model_load(const char *path, struct MclpdModel **out_model);

/**
 * Save a checkpoint whose manifest records `cfg`'s hash and seed.
 *
 * # Safety
 * `model` and `cfg` must be live handles and `path` a NUL-terminated string.
 */
enum MclpdStatus mclpd_model_save(const struct MclpdModel *model,
                                  const struct MclpdConfig *cfg,
                                  const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void mclpd_model_free(struct MclpdModel *model);

/**
 * Contrastive pre-training on `set` (labels are ignored).
 *
 * # Safety
 * `set` and `cfg` must be live handles and `out_model` a valid pointer.
 */
enum MclpdStatus mclpd_pretrain(const struct MclpdEpochs *set,
                                const struct MclpdConfig *cfg,
                                struct MclpdModel **out_model);

/**
 * Fine-tune `model` on the labeled `set`; writes the held-out test metrics
 * to `out_metrics` when it is non-null.
 *
 * # Safety
 * Handles must be live and `out_model` a valid pointer.
 */
enum MclpdStatus mclpd_finetune(const struct MclpdModel *model,
                                const struct MclpdEpochs *set,
                                const struct MclpdConfig *cfg,
                                struct MclpdModel **out_model,
                                struct MclpdMetrics *out_metrics);

/**
 * Predicted class of every epoch, written to `out_labels[0..len]`; `len`
 * must equal the number of epochs.
 *
 * # Safety
 * Handles must be live and `out_labels` must hold `len` bytes.
 */
enum MclpdStatus mclpd_predict(const struct MclpdModel *model,
                               const struct MclpdEpochs *set,
                               uint8_t *out_labels,
                               size_t len);

/**
 * Metrics of `model` on the labeled `set`.
 *
 * # Safety
 * Handles must be live and `out_metrics` a valid pointer.
 */
enum MclpdStatus mclpd_evaluate(const struct MclpdModel *model,
                                const struct MclpdEpochs *set,
                                struct MclpdMetrics *out_metrics);

/**
 * A freshly initialised model for `n_channels` inputs with default sizes.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
enum MclpdStatus mclpd_model_init(size_t n_channels, uint64_t seed, struct MclpdModel **out_model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCLPD_H */
