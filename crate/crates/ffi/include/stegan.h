#ifndef STEGAN_H
#define STEGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SgnStatus {
  SGN_STATUS_OK = 0,
  SGN_STATUS_NULL_POINTER = 1,
  SGN_STATUS_INVALID_ARGUMENT = 2,
  SGN_STATUS_DIMENSION_MISMATCH = 3,
  SGN_STATUS_NON_FINITE = 4,
  SGN_STATUS_DIVERGED = 5,
  SGN_STATUS_IO = 6,
  SGN_STATUS_IMAGE = 7,
  SGN_STATUS_SCHEME_MISMATCH = 8,
  SGN_STATUS_CHECKSUM = 9,
  SGN_STATUS_BAD_MAGIC = 10,
  SGN_STATUS_UNSUPPORTED_VERSION = 11,
  SGN_STATUS_MALFORMED = 12,
  SGN_STATUS_BUFFER_TOO_SMALL = 13,
  SGN_STATUS_PANIC = 14,
} SgnStatus;

/**
 * Opaque model handle.
 */
typedef struct SgnModel SgnModel;

/**
 * Training settings; fill with [`sgn_train_config_default`] or
 * [`sgn_train_config_reduced`] before changing fields.
 */
typedef struct SgnTrainConfig {
  double lambda;
  double gp_coeff;
  double lr;
  double lr_decay;
  double decay_at_fraction;
  size_t iters_per_stage;
  size_t stages;
  size_t coarsest_min_dim;
  size_t trainable_block_window;
  size_t critic_steps;
  double adam_beta1;
  double adam_beta2;
  size_t hidden_width;
  double noise_amp_scale;
  uint64_t seed;
} SgnTrainConfig;

/**
 * Byte buffer owned by the library; release with [`sgn_buffer_free`].
 */
typedef struct SgnBuffer {
  uint8_t *data;
  size_t len;
} SgnBuffer;

/**
 * Borrowed RGB image.
 */
typedef struct SgnImage {
  const uint8_t *data;
  size_t height;
  size_t width;
} SgnImage;

/**
 * Borrowed byte string.
 */
typedef struct SgnBytes {
  const uint8_t *data;
  size_t len;
} SgnBytes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sgn_last_error(void);

enum SgnStatus sgn_train_config_default(struct SgnTrainConfig *out);

/**
 * Small CPU profile: 500 iterations per stage, 4 stages.
 */
enum SgnStatus sgn_train_config_reduced(struct SgnTrainConfig *out);

/**
 * Parses a model container held in memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` must be writable.
 */
enum SgnStatus sgn_model_load(const uint8_t *bytes, size_t len, struct SgnModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SgnStatus sgn_model_load_file(const char *path, struct SgnModel **out);

/**
 * Serializes a model into a new buffer.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum SgnStatus sgn_model_save(const struct SgnModel *m, struct SgnBuffer *out);

/**
 * # Safety
 * `m` must be a live handle; `path` a NUL-terminated string.
 */
enum SgnStatus sgn_model_save_file(const struct SgnModel *m, const char *path);

/**
 * Releases a buffer from [`sgn_model_save`]. Null data is ignored.
 *
 * # Safety
 * `buf` must come from this library and not be freed twice.
 */
void sgn_buffer_free(struct SgnBuffer buf);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `m` must come from this library and not be freed twice.
 */
void sgn_model_free(struct SgnModel *m);

/**
 * Output size of extraction and sampling.
 *
 * # Safety
 * `m` must be a live handle; `height` and `width` writable.
 */
enum SgnStatus sgn_model_dims(const struct SgnModel *m, size_t *height, size_t *width);

/**
 * Trains a model of `cover` hiding `count` secrets, one key each. Pass
 * `shuffle_keys` (also `count` entries) to scramble the secrets first, or
 * null. A null `config` uses the defaults.
 *
 * # Safety
 * Every pointer must be valid for the stated counts; `out` writable.
 */
enum SgnStatus sgn_hide(const struct SgnImage *cover,
                        const struct SgnImage *secrets,
                        const struct SgnBytes *keys,
                        const struct SgnBytes *shuffle_keys,
                        size_t count,
                        const struct SgnTrainConfig *config,
                        struct SgnModel **out);

/**
 * Regenerates the image hidden under `key` into `out` (`out_len` bytes,
 * at least `height * width * 3`). `shuffle_key` may be null.
 *
 * # Safety
 * `m` must be a live handle; buffers valid for their lengths.
 */
enum SgnStatus sgn_extract(const struct SgnModel *m,
                           struct SgnBytes key,
                           const struct SgnBytes *shuffle_key,
                           uint8_t *out,
                           size_t out_len);

/**
 * Unconditional sample seeded by `seed`.
 *
 * # Safety
 * `m` must be a live handle; `out` valid for `out_len` bytes.
 */
enum SgnStatus sgn_sample(const struct SgnModel *m, uint64_t seed, uint8_t *out, size_t out_len);

/**
 * Least-significant-bit embedding; `out` must hold the cover's size.
 *
 * # Safety
 * Images and `out` must be valid for their sizes.
 */
enum SgnStatus sgn_lsb_hide(const struct SgnImage *cover,
                            const struct SgnImage *secret,
                            uint8_t *out,
                            size_t out_len);

/**
 * # Safety
 * `stego` and `out` must be valid for their sizes.
 */
enum SgnStatus sgn_lsb_extract(const struct SgnImage *stego, uint8_t *out, size_t out_len);

/**
 * PSNR in dB; identical images give +infinity.
 *
 * # Safety
 * Images must be valid; `out` writable.
 */
enum SgnStatus sgn_psnr(const struct SgnImage *a, const struct SgnImage *b, double *out);

/**
 * # Safety
 * Images must be valid; `out` writable.
 */
enum SgnStatus sgn_ssim(const struct SgnImage *a, const struct SgnImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEGAN_H */
