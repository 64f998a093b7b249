#ifndef DGAUG_H
#define DGAUG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * RICA mode: which of the two steps run.
 */
typedef enum DgaugRicaMode {
  DGAUG_RICA_MODE_STEP1 = 0,
  DGAUG_RICA_MODE_STEP2 = 1,
  DGAUG_RICA_MODE_BOTH = 2,
} DgaugRicaMode;

typedef enum DgaugStatus {
  DGAUG_STATUS_OK = 0,
  DGAUG_STATUS_NULL_POINTER = 1,
  DGAUG_STATUS_INVALID_ARGUMENT = 2,
  DGAUG_STATUS_SHAPE = 3,
  DGAUG_STATUS_IO = 4,
  DGAUG_STATUS_FORMAT = 5,
  DGAUG_STATUS_RUNTIME = 6,
  DGAUG_STATUS_PANIC = 7,
} DgaugStatus;

/**
 * Opaque checkpoint.
 */
typedef struct DgaugCheckpoint DgaugCheckpoint;

/**
 * Opaque RGB image.
 */
typedef struct DgaugImage DgaugImage;

/**
 * Per-channel RICA parameters in L, A, B order: target mean, target
 * standard deviation, span S and start T.
 */
typedef struct DgaugRicaParams {
  double values[3][4];
} DgaugRicaParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dgaug_last_error(char *buf, size_t len);

/**
 * Encoded CIELAB (`L*255/100`, `a+128`, `b+128`) of one sRGB pixel.
 *
 * # Safety
 * `rgb` must point to 3 bytes and `lab` to 3 writable doubles.
 */
enum DgaugStatus dgaug_srgb_to_lab8(const uint8_t *rgb, double *lab);

/**
 * sRGB of one encoded CIELAB triple, clamped to the gamut.
 *
 * # Safety
 * `lab` must point to 3 doubles and `rgb` to 3 writable bytes.
 */
enum DgaugStatus dgaug_lab8_to_srgb(const double *lab, uint8_t *rgb);

/**
 * Creates an image from `width * height * 3` interleaved RGB bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum DgaugStatus dgaug_image_new(size_t width,
                                 size_t height,
                                 const uint8_t *data,
                                 size_t len,
                                 struct DgaugImage **out);

/**
 * # Safety
 * `img` must be null or a handle from this library not yet freed.
 */
void dgaug_image_free(struct DgaugImage *img);

/**
 * Writes width and height of `img`.
 *
 * # Safety
 * `img` must be a live handle; `width` and `height` must be writable.
 */
enum DgaugStatus dgaug_image_size(const struct DgaugImage *img, size_t *width, size_t *height);

/**
 * Copies the interleaved RGB bytes of `img` into `buf`, which must hold
 * exactly `width * height * 3` bytes.
 *
 * # Safety
 * `img` must be a live handle and `buf` must point to `len` writable bytes.
 */
enum DgaugStatus dgaug_image_read(const struct DgaugImage *img, uint8_t *buf, size_t len);

/**
 * Draws RICA parameters from the default ranges with a generator seeded
 * by `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DgaugStatus dgaug_rica_sample(uint64_t seed, struct DgaugRicaParams *out);

/**
 * Applies RICA with explicit parameters, producing a new image handle.
 *
 * # Safety
 * `img` and `params` must be valid; `out` must be writable.
 */
enum DgaugStatus dgaug_rica_apply(const struct DgaugImage *img,
                                  const struct DgaugRicaParams *params,
                                  enum DgaugRicaMode mode,
                                  struct DgaugImage **out);

/**
 * Mean IoU of a predicted label map against ground truth (`len` pixels,
 * `classes` classes, label 255 ignored).
 *
 * # Safety
 * `pred` and `truth` must point to `len` bytes; `miou` must be writable.
 */
enum DgaugStatus dgaug_miou(const uint8_t *pred,
                            const uint8_t *truth,
                            size_t len,
                            size_t classes,
                            double *miou);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DgaugStatus dgaug_checkpoint_load(const char *path, struct DgaugCheckpoint **out);

/**
 * Writes a checkpoint atomically.
 *
 * # Safety
 * `ckpt` must be a live handle and `path` a NUL-terminated string.
 */
enum DgaugStatus dgaug_checkpoint_save(const struct DgaugCheckpoint *ckpt, const char *path);

/**
 * # Safety
 * `ckpt` must be null or a handle from this library not yet freed.
 */
void dgaug_checkpoint_free(struct DgaugCheckpoint *ckpt);

/**
 * Number of named arrays.
 *
 * # Safety
 * `ckpt` must be a live handle; `count` must be writable.
 */
enum DgaugStatus dgaug_checkpoint_len(const struct DgaugCheckpoint *ckpt, size_t *count);

/**
 * Name (NUL terminated, truncated to `name_len`) and shape of array
 * `index`. `ndim` receives the true rank; at most `max_dims` dimensions are
 * written.
 *
 * # Safety
 * `ckpt` must be a live handle; `name` must point to `name_len` writable
 * bytes, `dims` to `max_dims` writable values, and `ndim` must be writable.
 */
enum DgaugStatus dgaug_checkpoint_array_info(const struct DgaugCheckpoint *ckpt,
                                             size_t index,
                                             char *name,
                                             size_t name_len,
                                             uint64_t *dims,
                                             size_t max_dims,
                                             size_t *ndim);

/**
 * Copies the values of array `index`; `len` must equal its element count.
 *
 * # Safety
 * `ckpt` must be a live handle and `buf` must point to `len` writable floats.
 */
enum DgaugStatus dgaug_checkpoint_array_read(const struct DgaugCheckpoint *ckpt,
                                             size_t index,
                                             float *buf,
                                             size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGAUG_H */
