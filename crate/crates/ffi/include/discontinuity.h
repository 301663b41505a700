#ifndef DISCONTINUITY_H
#define DISCONTINUITY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_DIMENSION = 3,
  DC_STATUS_PARAMETER = 4,
  DC_STATUS_DOMAIN = 5,
  DC_STATUS_CONTRACT = 6,
  DC_STATUS_NUMERIC = 7,
  DC_STATUS_INSTABILITY = 8,
  DC_STATUS_SWEEP = 9,
  DC_STATUS_FORMAT = 10,
  DC_STATUS_LENGTH = 11,
  DC_STATUS_CONSISTENCY = 12,
  DC_STATUS_CHECKSUM = 13,
  DC_STATUS_UNSUPPORTED_VERSION = 14,
  DC_STATUS_CONFIG = 15,
  DC_STATUS_IO = 16,
  DC_STATUS_PANIC = 17,
} DcStatus;

// Opaque model handle.
typedef struct DcModel DcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *dc_last_error(void);

// Library version as a static NUL-terminated string.
const char *dc_version(void);

// Loads a checkpoint file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DcStatus dc_model_load(const char *path, struct DcModel **out);

// Writes the model to a checkpoint file.
//
// # Safety
// `model` must come from [`dc_model_load`]; `path` must be NUL-terminated.
enum DcStatus dc_model_save(const struct DcModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`dc_model_load`] and not be used afterwards.
void dc_model_free(struct DcModel *model);

// Input and output widths of the model.
//
// # Safety
// `model` must be a live handle; the out pointers must be writable.
enum DcStatus dc_model_dims(const struct DcModel *model, size_t *input_dim, size_t *output_dim);

// Evaluation-mode forward pass over `rows` row-major inputs.
//
// `out` must hold `rows * output_dim` values.
//
// # Safety
// `x` must point to `rows * input_dim` doubles and `out` to `out_len`.
enum DcStatus dc_model_forward(const struct DcModel *model,
                               const double *x,
                               size_t rows,
                               double *out,
                               size_t out_len);

// Minimum pairwise L1 distance between the rows of a `rows x cols` matrix,
// with the lexicographically first attaining pair.
//
// # Safety
// `values` must point to `rows * cols` doubles; out pointers writable.
enum DcStatus dc_min_pairwise_l1(const double *values,
                                 size_t rows,
                                 size_t cols,
                                 double *d_m,
                                 size_t *i,
                                 size_t *j);

// `d_m` of the model's outputs over `rows` inputs.
//
// # Safety
// As [`dc_model_forward`] for `x`; out pointers writable.
enum DcStatus dc_model_min_pairwise(const struct DcModel *model,
                                    const double *x,
                                    size_t rows,
                                    double *d_m,
                                    size_t *i,
                                    size_t *j);

// `x + eta * sign(gradient)` into `out`; clipped to `[0, 1]` when `clip` is nonzero.
//
// # Safety
// `x`, `gradient` and `out` must each point to `len` doubles.
enum DcStatus dc_fgsm_step(const double *x,
                           const double *gradient,
                           size_t len,
                           double eta,
                           int32_t clip,
                           double *out);

// `r = e_a / e_n` for one input `x` and its adversarial and random
// neighbours, each of width `input_dim`.
//
// # Safety
// `x`, `x_a` and `x_n` must each point to `input_dim` doubles.
enum DcStatus dc_model_expansion_ratio(const struct DcModel *model,
                                       const double *x,
                                       const double *x_a,
                                       const double *x_n,
                                       double *ratio);

// Expansion of the bit-interleaving bijection across the dyadic boundary
// at depth `k` with `precision` bits per coordinate.
//
// # Safety
// `ratio` must be writable.
enum DcStatus dc_boundary_expansion(uint32_t k, uint32_t precision, double *ratio);

// Runs the experiment described by a TOML config file. When `output_dir`
// is not null it replaces the config's output directory.
//
// # Safety
// `config_path` must be NUL-terminated; `output_dir` null or NUL-terminated.
enum DcStatus dc_run_experiment(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCONTINUITY_H */
