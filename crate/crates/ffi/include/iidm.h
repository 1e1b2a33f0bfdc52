#ifndef IIDM_H
#define IIDM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IidmStatus {
  IIDM_STATUS_OK = 0,
  IIDM_STATUS_NULL_ARGUMENT = 1,
  IIDM_STATUS_CONTRACT = 2,
  IIDM_STATUS_SHAPE = 3,
  IIDM_STATUS_FORMAT = 4,
  IIDM_STATUS_NUMERIC = 5,
  IIDM_STATUS_CONFIG = 6,
  IIDM_STATUS_MISSING_INPUT = 7,
  IIDM_STATUS_IO = 8,
  IIDM_STATUS_OTHER = 9,
  IIDM_STATUS_PANIC = 10,
} IidmStatus;

/**
 * An opaque trained model.
 */
typedef struct IidmModel IidmModel;

/**
 * An opaque raster.
 */
typedef struct IidmRaster IidmRaster;

/**
 * Metric values; `psnr` is `+inf` for identical images.
 */
typedef struct IidmMetrics {
  double mae;
  double mse;
  double rmse;
  double psnr;
  double ssim;
  size_t n_pixels;
} IidmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *iidm_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *iidm_version(void);

/**
 * Reads a RAS1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IidmStatus iidm_raster_read(const char *path, struct IidmRaster **out);

/**
 * Writes a raster as RAS1.
 *
 * # Safety
 * `raster` must come from this library; `path` must be a NUL-terminated string.
 */
enum IidmStatus iidm_raster_write(const struct IidmRaster *raster, const char *path);

/**
 * A single-band f32 raster from `height × width` row-major values.
 *
 * # Safety
 * `data` must point to `height * width` doubles; `out` must be writable.
 */
enum IidmStatus iidm_raster_from_f64(size_t height,
                                     size_t width,
                                     const double *data,
                                     struct IidmRaster **out);

/**
 * Height, width and channel count.
 *
 * # Safety
 * `raster` must come from this library; the three outputs must be writable.
 */
enum IidmStatus iidm_raster_dims(const struct IidmRaster *raster,
                                 size_t *height,
                                 size_t *width,
                                 size_t *channels);

/**
 * Copies one band as doubles into `buf`, which must hold `height * width` values.
 *
 * # Safety
 * `raster` must come from this library; `buf` must point to `len` writable doubles.
 */
enum IidmStatus iidm_raster_band(const struct IidmRaster *raster,
                                 size_t band,
                                 double *buf,
                                 size_t len);

/**
 * # Safety
 * `raster` must come from this library and not be used afterwards. Null is ignored.
 */
void iidm_raster_free(struct IidmRaster *raster);

/**
 * MAE, MSE, RMSE, PSNR and SSIM of `pred` against `truth`, over forest pixels of
 * `mask` or over every pixel when `mask` is null.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum IidmStatus iidm_evaluate(const struct IidmRaster *pred,
                              const struct IidmRaster *truth,
                              const struct IidmRaster *mask,
                              struct IidmMetrics *out);

/**
 * Carbon storage `factor·δ·ρ·γ·V` for stand volume `volume` (m³).
 *
 * # Safety
 * `out` must be writable.
 */
enum IidmStatus iidm_carbon_storage(double volume,
                                    double delta,
                                    double rho,
                                    double gamma,
                                    double factor,
                                    double *out);

/**
 * Loads a model checkpoint written by `iidm train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IidmStatus iidm_model_load(const char *path, struct IidmModel **out);

/**
 * Runs the reverse chain for one scene and returns a density raster.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum IidmStatus iidm_model_estimate(const struct IidmModel *model,
                                    const struct IidmRaster *imagery,
                                    const struct IidmRaster *mask,
                                    uint64_t seed,
                                    struct IidmRaster **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void iidm_model_free(struct IidmModel *model);

/**
 * Runs the command line with `argc` arguments (program name first) and returns its
 * exit code: 0 success, 1 usage error, 2 runtime error.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int32_t iidm_cli_run(size_t argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IIDM_H */
