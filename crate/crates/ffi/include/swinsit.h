#ifndef SWINSIT_H
#define SWINSIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SwinsitStatus {
  SWINSIT_STATUS_OK = 0,
  SWINSIT_STATUS_NULL_POINTER = 1,
  SWINSIT_STATUS_INVALID_ARGUMENT = 2,
  SWINSIT_STATUS_DIMENSION = 3,
  SWINSIT_STATUS_IO = 4,
  SWINSIT_STATUS_CHECKPOINT = 5,
  SWINSIT_STATUS_DEEP_FADE = 6,
  SWINSIT_STATUS_NUMERIC = 7,
  SWINSIT_STATUS_PANIC = 8,
} SwinsitStatus;

/**
 * Opaque channel handle owning its random stream.
 */
typedef struct SwinsitChannel SwinsitChannel;

/**
 * Opaque codec handle.
 */
typedef struct SwinsitCodec SwinsitCodec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (truncated and
 * NUL-terminated). Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t swinsit_last_error(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *swinsit_version(void);

/**
 * Load a codec checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SwinsitStatus swinsit_codec_load(const char *path, struct SwinsitCodec **out);

/**
 * Freshly initialized codec from a JSON model configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SwinsitStatus swinsit_codec_new(const char *config_json,
                                     uint64_t seed,
                                     struct SwinsitCodec **out);

/**
 * # Safety
 * `codec` must come from this library and `path` be a NUL-terminated string.
 */
enum SwinsitStatus swinsit_codec_save(const struct SwinsitCodec *codec, const char *path);

/**
 * # Safety
 * `codec` must be null or come from this library; it is invalid afterwards.
 */
void swinsit_codec_free(struct SwinsitCodec *codec);

/**
 * Input image height and width in pixels.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SwinsitStatus swinsit_codec_image_size(const struct SwinsitCodec *codec,
                                            uintptr_t *height,
                                            uintptr_t *width);

/**
 * Complex channel symbols per image, or 0 for a null handle.
 *
 * # Safety
 * `codec` must be null or come from this library.
 */
uintptr_t swinsit_codec_symbol_count(const struct SwinsitCodec *codec);

/**
 * Encode `n_images` row-major `H x W x 3` images in [0, 1] at `snr_db`.
 * Writes `n_images * k` symbols as interleaved real/imaginary pairs.
 *
 * # Safety
 * `pixels` must hold `n_images * H * W * 3` floats and `symbols` have room
 * for `symbols_len` floats.
 */
enum SwinsitStatus swinsit_codec_encode(const struct SwinsitCodec *codec,
                                        const float *pixels,
                                        uintptr_t n_images,
                                        double snr_db,
                                        float *symbols,
                                        uintptr_t symbols_len);

/**
 * Decode `n_images * k` interleaved symbols into `H x W x 3` images in [0, 1].
 *
 * # Safety
 * `symbols` must hold `n_images * k * 2` floats and `pixels` have room for
 * `pixels_len` floats.
 */
enum SwinsitStatus swinsit_codec_decode(const struct SwinsitCodec *codec,
                                        const float *symbols,
                                        uintptr_t n_images,
                                        double snr_db,
                                        float *pixels,
                                        uintptr_t pixels_len);

/**
 * Rayleigh block-fading channel seeded for reproducible draws.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SwinsitStatus swinsit_channel_new(uint64_t seed, struct SwinsitChannel **out);

/**
 * # Safety
 * `channel` must be null or come from this library; it is invalid afterwards.
 */
void swinsit_channel_free(struct SwinsitChannel *channel);

/**
 * Pass `n` interleaved complex symbols through one fading block in place:
 * draw `h`, then `y <- h y + w` at `snr_db`. The drawn gain is written to
 * `h_re`/`h_im` when they are not null.
 *
 * # Safety
 * `symbols` must hold `2 n` doubles; `h_re` and `h_im` must be null or valid.
 */
enum SwinsitStatus swinsit_channel_transmit(struct SwinsitChannel *channel,
                                            double *symbols,
                                            uintptr_t n,
                                            double snr_db,
                                            double *h_re,
                                            double *h_im);

/**
 * Maximum-likelihood gain estimate from `n` pilot/received pairs.
 *
 * # Safety
 * `pilots` and `received` must hold `2 n` doubles; `h_re`/`h_im` must be valid.
 */
enum SwinsitStatus swinsit_ml_estimate(const double *pilots,
                                       const double *received,
                                       uintptr_t n,
                                       double *h_re,
                                       double *h_im);

/**
 * Zero-forcing equalization of `n` interleaved symbols in place.
 *
 * # Safety
 * `symbols` must hold `2 n` doubles.
 */
enum SwinsitStatus swinsit_zf_equalize(double *symbols, uintptr_t n, double h_re, double h_im);

/**
 * Parameters removed when pruning `total` weights at ratio `sparsity`.
 *
 * # Safety
 * `pruned` must be a valid pointer.
 */
enum SwinsitStatus swinsit_pruned_count(uint64_t total, double sparsity, uint64_t *pruned);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWINSIT_H */
