#ifndef FPSCALE_H
#define FPSCALE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum FpsStatus {
  FPS_STATUS_OK = 0,
  FPS_STATUS_NULL_POINTER = 1,
  FPS_STATUS_INVALID_ARGUMENT = 2,
  FPS_STATUS_PARSE_ERROR = 3,
  FPS_STATUS_NUMERIC_ERROR = 4,
  FPS_STATUS_IO_ERROR = 5,
  FPS_STATUS_PANIC = 6,
} FpsStatus;

/**
 * Scale-sharing strategy for [`fps_quantize_dequantize`].
 */
typedef enum FpsStrategy {
  FPS_STRATEGY_BLOCK = 0,
  FPS_STRATEGY_CHANNEL = 1,
  FPS_STRATEGY_TENSOR = 2,
} FpsStrategy;

/**
 * Opaque set of law constants.
 */
typedef struct FpsConstants FpsConstants;

/**
 * Opaque minifloat format.
 */
typedef struct FpsFormat FpsFormat;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or valid for `len` writable bytes.
 */
size_t fps_last_error(char *buf, size_t len);

/**
 * Parses a format name such as `E4M3` (case-insensitive).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum FpsStatus fps_format_parse(const char *name, struct FpsFormat **out);

/**
 * Builds the format with `e` exponent and `m` mantissa bits.
 *
 * # Safety
 * `out` must be writable.
 */
enum FpsStatus fps_format_new(uint32_t e, uint32_t m, struct FpsFormat **out);

/**
 * # Safety
 * `fmt` must be null or come from this library and not be freed twice.
 */
void fps_format_free(struct FpsFormat *fmt);

/**
 * Largest finite magnitude of the format.
 *
 * # Safety
 * `fmt` must be a live handle; `out` must be writable.
 */
enum FpsStatus fps_format_fp_max(const struct FpsFormat *fmt, double *out);

/**
 * Rounds `x` to the nearest representable value, saturating at the range.
 *
 * # Safety
 * `fmt` must be a live handle; `out` must be writable.
 */
enum FpsStatus fps_quantize_scalar(const struct FpsFormat *fmt, double x, double *out);

/**
 * Quantizes and dequantizes a row-major `rows x cols` tensor into `out`.
 * `block` is the block size for [`FpsStrategy::Block`] and ignored otherwise.
 *
 * # Safety
 * `data` and `out` must each hold `rows * cols` doubles.
 */
enum FpsStatus fps_quantize_dequantize(const struct FpsFormat *fmt,
                                       const double *data,
                                       size_t rows,
                                       size_t cols,
                                       enum FpsStrategy strategy,
                                       size_t block,
                                       double *out);

/**
 * Loads a named built-in preset.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum FpsStatus fps_constants_preset(const char *name, struct FpsConstants **out);

/**
 * Parses preset text (`key = value` per line).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum FpsStatus fps_constants_parse(const char *text, struct FpsConstants **out);

/**
 * Reads a preset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FpsStatus fps_constants_from_file(const char *path, struct FpsConstants **out);

/**
 * # Safety
 * `c` must be null or come from this library and not be freed twice.
 */
void fps_constants_free(struct FpsConstants *c);

/**
 * Copies `n, alpha, d, beta, epsilon, gamma, delta, nu` into `out[0..8]`.
 *
 * # Safety
 * `c` must be a live handle; `out` must hold 8 doubles.
 */
enum FpsStatus fps_constants_values(const struct FpsConstants *c, double *out);

/**
 * Unified loss at model size `n`, tokens `d`, layout `e`/`m`, block `log2b`.
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum FpsStatus fps_capybara_loss(const struct FpsConstants *c,
                                 double n,
                                 double d,
                                 double e,
                                 double m,
                                 double log2b,
                                 double *out);

/**
 * Full-precision loss at model size `n` and tokens `d`.
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum FpsStatus fps_chinchilla_loss(const struct FpsConstants *c, double n, double d, double *out);

/**
 * Token count minimizing the unified loss at fixed `n`.
 *
 * # Safety
 * `c` must be a live handle; `out` must be writable.
 */
enum FpsStatus fps_critical_data_size(const struct FpsConstants *c,
                                      double n,
                                      double e,
                                      double m,
                                      double log2b,
                                      double *out);

/**
 * Integer exponent/mantissa split for `bits` total bits.
 *
 * # Safety
 * `c` must be a live handle; `e` and `m` must be writable.
 */
enum FpsStatus fps_optimal_layout(const struct FpsConstants *c,
                                  uint32_t bits,
                                  uint32_t *e,
                                  uint32_t *m);

/**
 * Compute-optimal precision, model size and tokens for budget `flops`
 * with cost `k * N * D * P`.
 *
 * # Safety
 * `c` must be a live handle; `p`, `n` and `d` must be writable.
 */
enum FpsStatus fps_p_opt_joint(const struct FpsConstants *c,
                               double flops,
                               double k,
                               double log2b,
                               double *p,
                               double *n,
                               double *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPSCALE_H */
