#ifndef MSDCS_H
#define MSDCS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum MsdcsStatus {
  MSDCS_STATUS_OK = 0,
  MSDCS_STATUS_NULL_POINTER = 1,
  MSDCS_STATUS_INVALID_ARGUMENT = 2,
  MSDCS_STATUS_IO = 3,
  MSDCS_STATUS_UNSUPPORTED_FORMAT = 4,
  MSDCS_STATUS_MALFORMED = 5,
  MSDCS_STATUS_CHECKSUM = 6,
  MSDCS_STATUS_MODEL_MISMATCH = 7,
  MSDCS_STATUS_INTERNAL = 8,
} MsdcsStatus;

/**
 * A loaded model. Only ever handled through a pointer.
 */
typedef struct MsdcsModel MsdcsModel;

/**
 * Library-owned byte buffer.
 */
typedef struct MsdcsBuffer {
  uint8_t *data;
  size_t len;
} MsdcsBuffer;

/**
 * Summary of a model's sampling setup.
 */
typedef struct MsdcsModelInfo {
  uint32_t block_size;
  uint32_t measurements;
  uint32_t phase;
  double subrate_target;
  double subrate_realized;
  uint32_t checksum;
} MsdcsModelInfo;

/**
 * Library-owned 8-bit grayscale image, row-major.
 */
typedef struct MsdcsImage {
  uint8_t *pixels;
  uint32_t width;
  uint32_t height;
} MsdcsImage;

/**
 * Library version as a static NUL-terminated string.
 */
const char *msdcs_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next library call on this thread.
 */
const char *msdcs_last_error(void);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsdcsStatus msdcs_model_load(const char *path, struct MsdcsModel **out);

/**
 * Decodes a model from the bytes of a model file.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be valid.
 */
enum MsdcsStatus msdcs_model_from_bytes(const uint8_t *data, size_t len, struct MsdcsModel **out);

/**
 * Full-rate model that reconstructs its input exactly.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MsdcsStatus msdcs_model_identity(uint32_t block_size, struct MsdcsModel **out);

/**
 * Serializes a model in the model file format.
 *
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum MsdcsStatus msdcs_model_to_bytes(const struct MsdcsModel *model, struct MsdcsBuffer *out);

/**
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum MsdcsStatus msdcs_model_info(const struct MsdcsModel *model, struct MsdcsModelInfo *out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from this library and not be freed twice.
 */
void msdcs_model_free(struct MsdcsModel *model);

/**
 * Compresses a row-major 8-bit image into a measurement packet.
 *
 * # Safety
 * `pixels` must point to `width * height` bytes; `model` and `out` valid.
 */
enum MsdcsStatus msdcs_compress(const struct MsdcsModel *model,
                                const uint8_t *pixels,
                                uint32_t width,
                                uint32_t height,
                                struct MsdcsBuffer *out);

/**
 * Reconstructs the cropped image from a measurement packet.
 *
 * # Safety
 * `packet` must point to `len` bytes; `model` and `out` must be valid.
 */
enum MsdcsStatus msdcs_decompress(const struct MsdcsModel *model,
                                  const uint8_t *packet,
                                  size_t len,
                                  bool ignore_model_checksum,
                                  struct MsdcsImage *out);

/**
 * # Safety
 * `buffer` must be null or hold a buffer returned by this library.
 */
void msdcs_buffer_free(struct MsdcsBuffer *buffer);

/**
 * # Safety
 * `image` must be null or hold an image returned by this library.
 */
void msdcs_image_free(struct MsdcsImage *image);

/**
 * PSNR in dB between two 8-bit images of equal size.
 *
 * # Safety
 * `a` and `b` must each point to `width * height` bytes; `out` valid.
 */
enum MsdcsStatus msdcs_psnr(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t width,
                            uint32_t height,
                            double *out);

/**
 * Mean SSIM between two 8-bit images of equal size.
 *
 * # Safety
 * As for [`msdcs_psnr`].
 */
enum MsdcsStatus msdcs_ssim(const uint8_t *a,
                            const uint8_t *b,
                            uint32_t width,
                            uint32_t height,
                            double *out);

#endif  /* MSDCS_H */
