/* SPDX-License-Identifier: Apache-2.0 */

#ifndef FIPGRAPH_H
#define FIPGRAPH_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FG_KIND_SA0 1

#define FG_KIND_SA1 2

#define FG_KIND_STR 4

#define FG_KIND_STF 8

/**
 * Result code of every fallible call.
 */
typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_UTF8 = 2,
  FG_STATUS_PARSE = 3,
  FG_STATUS_INVALID_ARGUMENT = 4,
  FG_STATUS_IO = 5,
  FG_STATUS_CONFIG_MISMATCH = 6,
  FG_STATUS_NUMERIC = 7,
  FG_STATUS_BUFFER_TOO_SMALL = 8,
  FG_STATUS_PANIC = 9,
} FgStatus;

/**
 * Parsed netlist.
 */
typedef struct FgCircuit FgCircuit;

/**
 * Fault impact probabilities per kind, line and cycle.
 */
typedef struct FgFip FgFip;

/**
 * Trained predictor loaded from a checkpoint.
 */
typedef struct FgModel FgModel;

/**
 * Circuit size summary.
 */
typedef struct FgStats {
  size_t gates;
  size_t dffs;
  size_t pis;
  size_t pos;
  size_t lines;
} FgStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fg_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fg_last_error(char *buf, size_t len);

/**
 * Parses ISCAS'89 `.bench` text.
 *
 * # Safety
 * `name` and `text` must be NUL-terminated strings; `out` must be writable.
 */
enum FgStatus fg_circuit_parse(const char *name, const char *text, struct FgCircuit **out);

/**
 * The built-in s27 benchmark.
 *
 * # Safety
 * `out` must be writable.
 */
enum FgStatus fg_circuit_s27(struct FgCircuit **out);

/**
 * # Safety
 * `circuit` must come from this library; `out` must be writable.
 */
enum FgStatus fg_circuit_stats(const struct FgCircuit *circuit, struct FgStats *out);

/**
 * # Safety
 * `circuit` must be null or come from this library and not be used again.
 */
void fg_circuit_free(struct FgCircuit *circuit);

/**
 * Fault-simulates every line for the kinds in `kind_mask` (`FG_KIND_*`),
 * observing primary outputs and, if `observe_ppo` is set, flip-flop D pins.
 *
 * # Safety
 * `circuit` must come from this library; `out` must be writable.
 */
enum FgStatus fg_fip_simulate(const struct FgCircuit *circuit,
                              uint32_t kind_mask,
                              size_t n_patterns,
                              size_t n_cycles,
                              uint64_t seed,
                              bool observe_ppo,
                              struct FgFip **out);

/**
 * Dimensions of a FIP matrix. Any output pointer may be null.
 *
 * # Safety
 * `fip` must come from this library.
 */
enum FgStatus fg_fip_dims(const struct FgFip *fip, size_t *kinds, size_t *lines, size_t *cycles);

/**
 * FIP of `line` at `cycle` (1-based) for the `kind_index`-th simulated kind.
 *
 * # Safety
 * `fip` must come from this library; `out` must be writable.
 */
enum FgStatus fg_fip_get(const struct FgFip *fip,
                         size_t kind_index,
                         size_t line,
                         size_t cycle,
                         double *out);

/**
 * # Safety
 * `fip` must be null or come from this library and not be used again.
 */
void fg_fip_free(struct FgFip *fip);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FgStatus fg_model_load(const char *path, struct FgModel **out);

/**
 * Number of values [`fg_model_predict`] writes for `circuit`.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum FgStatus fg_model_output_len(const struct FgModel *model,
                                  const struct FgCircuit *circuit,
                                  size_t *out);

/**
 * Predicts the FIP of the first output window, laid out as
 * `[frame][node][channel]`. Testability-feature models need no simulation;
 * FIP-feature models simulate `n_patterns` patterns for their inputs.
 *
 * # Safety
 * Handles must come from this library; `buf` must hold `len` doubles.
 */
enum FgStatus fg_model_predict(const struct FgModel *model,
                               const struct FgCircuit *circuit,
                               uint64_t seed,
                               size_t n_patterns,
                               double *buf,
                               size_t len);

/**
 * # Safety
 * `model` must be null or come from this library and not be used again.
 */
void fg_model_free(struct FgModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIPGRAPH_H */
