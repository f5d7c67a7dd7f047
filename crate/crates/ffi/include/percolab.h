#ifndef PERCOLAB_H
#define PERCOLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PercolabStatus {
  PERCOLAB_STATUS_OK = 0,
  PERCOLAB_STATUS_NULL_POINTER = 1,
  PERCOLAB_STATUS_INVALID_PARAMETER = 2,
  PERCOLAB_STATUS_BOX_OUT_OF_BOUNDS = 3,
  PERCOLAB_STATUS_VERTEX_OUT_OF_WINDOW = 4,
  PERCOLAB_STATUS_EMPTY_SET = 5,
  PERCOLAB_STATUS_INFINITE_CLUSTER = 6,
  PERCOLAB_STATUS_NO_INFINITE_CLUSTER = 7,
  PERCOLAB_STATUS_MARGIN_VIOLATION = 8,
  PERCOLAB_STATUS_INVARIANT_VIOLATION = 9,
  PERCOLAB_STATUS_INSUFFICIENT_DATA = 10,
  PERCOLAB_STATUS_PRECONDITION = 11,
  PERCOLAB_STATUS_BUDGET_EXCEEDED = 12,
  PERCOLAB_STATUS_MANIFEST = 13,
  PERCOLAB_STATUS_IO = 14,
  PERCOLAB_STATUS_PANIC = 15,
} PercolabStatus;

/**
 * Opaque handle to one sampled bond configuration.
 */
typedef struct PercolabConfig PercolabConfig;

/**
 * Opaque handle to a finite window of `Z^d` with its box lattice.
 */
typedef struct PercolabWindow PercolabWindow;

/**
 * Per-sample structure report. Sizes are -1 when undefined for the sample.
 */
typedef struct PercolabSampleSummary {
  bool origin_finite;
  bool small;
  bool excluded;
  int64_t s_o_size;
  int64_t cut_size;
  int64_t touching;
  uint64_t occurring;
  uint64_t violations;
} PercolabSampleSummary;

typedef struct PercolabEstimate {
  double estimate;
  double se;
  double ci_lo;
  double ci_hi;
  uint64_t samples;
} PercolabEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *percolab_version(void);

/**
 * Message for the last failing call on this thread; empty after a success.
 * The pointer stays valid until the next percolab call on the same thread.
 */
const char *percolab_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum PercolabStatus percolab_window_new(uint32_t d,
                                        int64_t n,
                                        int64_t r,
                                        struct PercolabWindow **out);

/**
 * # Safety
 * `w` must be null or a handle from `percolab_window_new` not yet freed.
 */
void percolab_window_free(struct PercolabWindow *w);

/**
 * # Safety
 * `w` must be a live window handle and `out` writable.
 */
enum PercolabStatus percolab_window_edge_count(const struct PercolabWindow *w, uint64_t *out);

/**
 * # Safety
 * `w` must be a live window handle and `out` writable.
 */
enum PercolabStatus percolab_window_box_count(const struct PercolabWindow *w, uint64_t *out);

/**
 * Samples configuration `sample_index` of the stream `seed` at density `p`.
 *
 * # Safety
 * `w` must be a live window handle and `out` writable.
 */
enum PercolabStatus percolab_config_sample(const struct PercolabWindow *w,
                                           double p,
                                           uint64_t seed,
                                           uint64_t sample_index,
                                           struct PercolabConfig **out);

/**
 * # Safety
 * `c` must be null or a handle from `percolab_config_sample` not yet freed.
 */
void percolab_config_free(struct PercolabConfig *c);

/**
 * # Safety
 * `c` must be a live configuration handle and `out` writable.
 */
enum PercolabStatus percolab_config_open_count(const struct PercolabConfig *c, uint64_t *out);

/**
 * State of the edge in slot `slot` (`vertex · d + axis`).
 *
 * # Safety
 * `c` must be a live configuration handle and `out` writable.
 */
enum PercolabStatus percolab_config_is_open(const struct PercolabConfig *c,
                                            uint64_t slot,
                                            bool *out);

/**
 * Runs the full per-sample structure pipeline on `c`.
 *
 * # Safety
 * `c` must be a live configuration handle and `out` writable.
 */
enum PercolabStatus percolab_config_analyze(const struct PercolabConfig *c,
                                            bool inject_fault,
                                            struct PercolabSampleSummary *out);

/**
 * # Safety
 * `w` must be a live window handle and `out` writable.
 */
enum PercolabStatus percolab_theta_hat(const struct PercolabWindow *w,
                                       double p,
                                       uint64_t samples,
                                       uint64_t seed,
                                       struct PercolabEstimate *out);

/**
 * # Safety
 * `w` must be a live window handle and `out` writable.
 */
enum PercolabStatus percolab_kappa_hat(const struct PercolabWindow *w,
                                       double p,
                                       uint64_t samples,
                                       uint64_t seed,
                                       struct PercolabEstimate *out);

/**
 * Monte Carlo probability that the origin box at scale `n` is good.
 *
 * # Safety
 * `out` must be writable.
 */
enum PercolabStatus percolab_good_probability(uint32_t d,
                                              int64_t n,
                                              double p,
                                              uint64_t samples,
                                              uint64_t seed,
                                              struct PercolabEstimate *out);

/**
 * Number of integer partitions of `n`; fails when it does not fit in 64 bits.
 *
 * # Safety
 * `out` must be writable.
 */
enum PercolabStatus percolab_partition_count(uint32_t n, uint64_t *out);

/**
 * Connected sets of `n` boxes containing the origin box, axis or ⊠ adjacency.
 *
 * # Safety
 * `out` must be writable.
 */
enum PercolabStatus percolab_animal_count(uint32_t d, bool diagonal, uint32_t n, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERCOLAB_H */
