#ifndef ADVC_H
#define ADVC_H

/* Generated by cbindgen from advc-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Nonzero values match the CLI's exit codes; `ARGUMENT`
 * flags misuse of the ABI itself (null or non-UTF-8 arguments).
 */
typedef enum AdvcStatus {
  ADVC_STATUS_OK = 0,
  ADVC_STATUS_PANIC = 1,
  ADVC_STATUS_CONFIG = 2,
  ADVC_STATUS_INPUT = 3,
  ADVC_STATUS_FORMAT = 4,
  ADVC_STATUS_SHAPE = 5,
  ADVC_STATUS_DOMAIN = 6,
  ADVC_STATUS_EXTRACTION = 7,
  ADVC_STATUS_EVAL = 8,
  ADVC_STATUS_PARAM = 9,
  ADVC_STATUS_TRAINING = 10,
  ADVC_STATUS_IO = 11,
  ADVC_STATUS_ARGUMENT = 12,
} AdvcStatus;

/**
 * Opaque conversion handle; create with `advc_converter_open`, release
 * with `advc_converter_close`.
 */
typedef struct AdvcConverter AdvcConverter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *advc_version(void);

/**
 * Message for the last failing call on this thread, or null after a
 * success. The pointer is valid until the next advc call on the thread.
 */
const char *advc_last_error(void);

/**
 * Load a project config and a checkpoint into a conversion handle.
 * On success writes the handle to `out` and returns `ADVC_STATUS_OK`.
 *
 * # Safety
 * `config_path` and `checkpoint_path` must be NUL-terminated strings;
 * `out` must point to writable memory for one pointer.
 */
enum AdvcStatus advc_converter_open(const char *config_path,
                                    const char *checkpoint_path,
                                    struct AdvcConverter **out);

/**
 * Convert `input_wav` into the target voice at `output_wav`.
 *
 * # Safety
 * `converter` must come from `advc_converter_open` and not be closed;
 * the paths must be NUL-terminated strings.
 */
enum AdvcStatus advc_converter_convert_wav(const struct AdvcConverter *converter,
                                           const char *input_wav,
                                           const char *output_wav);

/**
 * Checkpoint step the handle was restored from.
 *
 * # Safety
 * `converter` must come from `advc_converter_open` and not be closed.
 */
uint64_t advc_converter_step(const struct AdvcConverter *converter);

/**
 * Release a handle. Null is a no-op.
 *
 * # Safety
 * `converter` must come from `advc_converter_open` and not be closed twice.
 */
void advc_converter_close(struct AdvcConverter *converter);

/**
 * Mel-cepstral distortion in dB between two wav files, DTW-aligned,
 * using the default 16 kHz analysis geometry.
 *
 * # Safety
 * The paths must be NUL-terminated strings; `out_mcd_db` must point to
 * writable memory for one double.
 */
enum AdvcStatus advc_mcd(const char *converted_wav, const char *reference_wav, double *out_mcd_db);

/**
 * Cosine similarity of the built-in speaker embeddings of two wav files.
 *
 * # Safety
 * The paths must be NUL-terminated strings; `out_cos_sim` must point to
 * writable memory for one double.
 */
enum AdvcStatus advc_cosine_similarity(const char *converted_wav,
                                       const char *reference_wav,
                                       double *out_cos_sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVC_H */
