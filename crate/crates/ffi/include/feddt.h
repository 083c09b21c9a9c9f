/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FEDDT_H
#define FEDDT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdtStatus {
  FDT_STATUS_OK = 0,
  FDT_STATUS_NULL_POINTER = 1,
  FDT_STATUS_INVALID_ARGUMENT = 2,
  FDT_STATUS_CONFIG = 3,
  FDT_STATUS_DATA = 4,
  FDT_STATUS_DIMENSION = 5,
  FDT_STATUS_FORMAT = 6,
  FDT_STATUS_PROTOCOL = 7,
  FDT_STATUS_INTEGRITY = 8,
  FDT_STATUS_GROWTH_CAP = 9,
  FDT_STATUS_VERIFICATION = 10,
  FDT_STATUS_IO = 11,
  FDT_STATUS_CONTRACT = 12,
  FDT_STATUS_PANIC = 99,
} FdtStatus;

/**
 * Opaque model handle.
 */
typedef struct FdtModel FdtModel;

typedef struct FdtModelConfig {
  size_t vocab_size;
  size_t frame_dim;
  size_t d_model;
  size_t heads;
  size_t ffn_dim;
  size_t target_layers;
  size_t growth_parts;
  size_t max_seq_len;
  bool literal_division;
} FdtModelConfig;

typedef struct FdtParamCount {
  size_t block_params;
  size_t fixed_params;
  size_t per_enc_block;
  size_t per_dec_block;
} FdtParamCount;

/**
 * Closed-form totals in weight units. The FedDT closed form is a reduced
 * fraction `closed_form_num / closed_form_den`.
 */
typedef struct FdtCostTotals {
  uint64_t fedt_total;
  uint64_t feddt_series_total;
  uint64_t feddt_closed_form_num;
  uint64_t feddt_closed_form_den;
  double series_ratio;
  double closed_form_ratio;
} FdtCostTotals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *fdt_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *fdt_version(void);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum FdtStatus fdt_model_config_default(struct FdtModelConfig *out);

/**
 * Creates a model at its initial depth.
 *
 * # Safety
 * `config` must be null or point to a valid config; `out` must be null or
 * valid for writes.
 */
enum FdtStatus fdt_model_new(const struct FdtModelConfig *config,
                             uint64_t seed,
                             struct FdtModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void fdt_model_free(struct FdtModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` valid for writes.
 */
enum FdtStatus fdt_model_layers(const struct FdtModel *model, size_t *out);

/**
 * Appends `q` blocks to both stacks.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum FdtStatus fdt_model_grow(struct FdtModel *model, size_t q);

/**
 * # Safety
 * `model` must be a live handle; `out` valid for writes.
 */
enum FdtStatus fdt_model_param_count(const struct FdtModel *model, struct FdtParamCount *out);

/**
 * Serializes the model; `full` adds the growth seed and Adam moments. The
 * buffer is released with [`fdt_bytes_free`].
 *
 * # Safety
 * `model` must be a live handle; `out_ptr` and `out_len` valid for writes.
 */
enum FdtStatus fdt_model_serialize(const struct FdtModel *model,
                                   bool full,
                                   uint8_t **out_ptr,
                                   size_t *out_len);

/**
 * # Safety
 * `config` must point to a valid config, `data` to `len` readable bytes and
 * `out` must be valid for writes.
 */
enum FdtStatus fdt_model_deserialize(const struct FdtModelConfig *config,
                                     const uint8_t *data,
                                     size_t len,
                                     struct FdtModel **out);

/**
 * Generates `n_frames` frames into `out` (row-major, `n_frames · frame_dim`
 * values; `out_len` must be exactly that).
 *
 * # Safety
 * `tokens` must point to `n_tokens` values and `out` to `out_len` writable
 * doubles.
 */
enum FdtStatus fdt_model_infer(const struct FdtModel *model,
                               const uint32_t *tokens,
                               size_t n_tokens,
                               size_t n_frames,
                               double *out,
                               size_t out_len);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum FdtStatus fdt_cost(uint64_t rounds,
                        uint64_t parts,
                        uint64_t layers,
                        uint64_t w1,
                        uint64_t w2,
                        struct FdtCostTotals *out);

/**
 * Runs the experiment described by a TOML run configuration in memory and
 * returns its JSON summary (release with [`fdt_string_free`]).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out_json` valid for writes.
 */
enum FdtStatus fdt_run_training(const char *config_toml, char **out_json);

/**
 * Runs the finite-difference suite; `passed` is false when the largest
 * relative error reaches the tolerance.
 *
 * # Safety
 * `max_rel_err` and `passed` must be valid for writes.
 */
enum FdtStatus fdt_gradcheck(uint64_t seed, double *max_rel_err, bool *passed);

/**
 * # Safety
 * `ptr`/`len` must come from a single library call returning bytes, or
 * `ptr` may be null.
 */
void fdt_bytes_free(uint8_t *ptr, size_t len);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void fdt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDDT_H */
