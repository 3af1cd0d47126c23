#ifndef PATCHVOTE_H
#define PATCHVOTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum PvStatus {
  PV_STATUS_OK = 0,
  PV_STATUS_NULL_ARGUMENT = 1,
  PV_STATUS_INVALID_UTF8 = 2,
  PV_STATUS_INVALID_PATCH = 3,
  PV_STATUS_APPLY_FAILED = 4,
  PV_STATUS_INVALID_INPUT = 5,
  PV_STATUS_UNDEFINED = 6,
  PV_STATUS_IO = 7,
  PV_STATUS_PANIC = 8,
} PvStatus;

// Equivalence classes of a set of patches.
typedef struct PvDedup PvDedup;

// A boolean correctness matrix, one row per issue.
typedef struct PvMatrix PvMatrix;

// A parsed unified diff.
typedef struct PvPatch PvPatch;

// An in-memory file tree.
typedef struct PvTree PvTree;

typedef struct PvBounds {
  double oracle;
  double adversary;
  double average;
  double all_correct;
  double all_incorrect;
} PvBounds;

// Confusion-matrix metrics. A metric whose denominator is zero has its
// `has_` flag cleared and its value set to NaN.
typedef struct PvConfusion {
  double accuracy;
  double precision;
  double recall;
  double f1;
  bool has_precision;
  bool has_recall;
  bool has_f1;
} PvConfusion;

typedef struct PvWilcoxon {
  double statistic;
  double p_value;
  // Pairs left after dropping zero differences.
  size_t n;
  // Whether the exact distribution was used.
  bool exact;
  bool significant;
} PvWilcoxon;

typedef struct PvCorrelations {
  double pearson_r;
  double spearman_rho;
  double kendall_tau;
} PvCorrelations;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library on the same thread.
const char *pv_last_error(void);

// Library version as a static string.
const char *pv_version(void);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void pv_string_free(char *s);

// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum PvStatus pv_patch_parse(const char *text, struct PvPatch **out);

// # Safety
// `patch` must be NULL or a handle from [`pv_patch_parse`].
void pv_patch_free(struct PvPatch *patch);

// Number of files the patch touches; 0 for NULL.
//
// # Safety
// `patch` must be NULL or a live handle.
size_t pv_patch_file_count(const struct PvPatch *patch);

// Renders the patch back to unified-diff text.
//
// # Safety
// `patch` must be a live handle and `out` a valid pointer.
enum PvStatus pv_patch_to_unified(const struct PvPatch *patch, char **out);

// Canonical form used for duplicate detection under `profile`.
//
// # Safety
// `patch` must be a live handle, `profile` a NUL-terminated string and
// `out` a valid pointer.
enum PvStatus pv_patch_canonical(const struct PvPatch *patch, const char *profile, char **out);

struct PvTree *pv_tree_new(void);

// Reads every file under `dir`, skipping `.git`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum PvStatus pv_tree_from_dir(const char *dir, struct PvTree **out);

// # Safety
// `tree` must be NULL or a tree handle.
void pv_tree_free(struct PvTree *tree);

// Sets the content of `path`.
//
// # Safety
// `tree` must be a live handle, `path` NUL-terminated, and `data` must
// point to `len` readable bytes (or be NULL when `len` is 0).
enum PvStatus pv_tree_insert(struct PvTree *tree,
                             const char *path,
                             const uint8_t *data,
                             size_t len);

// Borrows the content of `path`. The pointer stays valid until the tree is
// modified or freed. Returns `InvalidInput` when the path is absent.
//
// # Safety
// `tree` must be a live handle, `path` NUL-terminated, `data` and `len`
// valid pointers.
enum PvStatus pv_tree_get(const struct PvTree *tree,
                          const char *path,
                          const uint8_t **data,
                          size_t *len);

// Number of files; 0 for NULL.
//
// # Safety
// `tree` must be NULL or a live handle.
size_t pv_tree_len(const struct PvTree *tree);

// Applies `patch` to `tree`, writing a new tree to `out`. `tree` is left
// unchanged.
//
// # Safety
// `tree` and `patch` must be live handles and `out` a valid pointer.
enum PvStatus pv_tree_apply(const struct PvTree *tree,
                            const struct PvPatch *patch,
                            struct PvTree **out);

// Groups `n` patches into equivalence classes. `ids[i]` names `texts[i]`.
//
// # Safety
// `ids` and `texts` must each point to `n` NUL-terminated strings,
// `profile` must be NUL-terminated and `out` valid.
enum PvStatus pv_dedup(const char *const *ids,
                       const char *const *texts,
                       size_t n,
                       const char *profile,
                       struct PvDedup **out);

// # Safety
// `report` must be NULL or a handle from [`pv_dedup`].
void pv_dedup_free(struct PvDedup *report);

// Number of equivalence classes; 0 for NULL.
//
// # Safety
// `report` must be NULL or a live handle.
size_t pv_dedup_class_count(const struct PvDedup *report);

// Representative of the class containing `id`.
//
// # Safety
// `report` must be a live handle, `id` NUL-terminated, `out` valid.
enum PvStatus pv_dedup_representative(const struct PvDedup *report, const char *id, char **out);

// The whole report as JSON.
//
// # Safety
// `report` must be a live handle and `out` valid.
enum PvStatus pv_dedup_to_json(const struct PvDedup *report, char **out);

// Builds a matrix from `rows * cols` row-major outcomes.
//
// # Safety
// `data` must point to `rows * cols` readable bools and `out` be valid.
enum PvStatus pv_matrix_new(const bool *data, size_t rows, size_t cols, struct PvMatrix **out);

// Parses the matrix JSON document `{"issues": [{"id", "outcomes"}]}`.
//
// # Safety
// `json` must be NUL-terminated and `out` valid.
enum PvStatus pv_matrix_from_json(const char *json, struct PvMatrix **out);

// # Safety
// `matrix` must be NULL or a matrix handle.
void pv_matrix_free(struct PvMatrix *matrix);

// # Safety
// `matrix` must be a live handle and `out` valid.
enum PvStatus pv_matrix_bounds(const struct PvMatrix *matrix, struct PvBounds *out);

// # Safety
// `out` must be valid.
enum PvStatus pv_confusion(uint64_t tp,
                           uint64_t tn,
                           uint64_t fp,
                           uint64_t fn_,
                           struct PvConfusion *out);

// Two-sided signed-rank test on `n` pairs.
//
// # Safety
// `x` and `y` must point to `n` doubles and `out` be valid.
enum PvStatus pv_wilcoxon(const double *x, const double *y, size_t n, struct PvWilcoxon *out);

// # Safety
// `x` and `y` must point to `n` doubles and `out` be valid.
enum PvStatus pv_correlations(const double *x,
                              const double *y,
                              size_t n,
                              struct PvCorrelations *out);

// Majority winner of `n_votes` votes, each a candidate index below
// `n_candidates`. Ties are drawn with `seed`; `tie` reports whether one
// happened.
//
// # Safety
// `votes` must point to `n_votes` values; `winner` and `tie` must be valid.
enum PvStatus pv_tally(const size_t *votes,
                       size_t n_votes,
                       size_t n_candidates,
                       uint64_t seed,
                       size_t *winner,
                       bool *tie);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHVOTE_H */
