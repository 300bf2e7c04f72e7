#ifndef SPANFORGE_H
#define SPANFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SF_STATUS_OK = 0,
  /**
   * A null pointer, non-UTF-8 string or unknown name was passed.
   */
  SF_STATUS_INVALID_ARGUMENT = 1,
  SF_STATUS_IO = 2,
  SF_STATUS_MALFORMED = 3,
  /**
   * The data was read but violates an invariant.
   */
  SF_STATUS_INVALID_DATA = 4,
  SF_STATUS_INVALID_PARAMS = 5,
  SF_STATUS_PANIC = 6,
} SfStatus;

/**
 * Opaque loaded dataset.
 */
typedef struct SfDataset SfDataset;

/**
 * Half-open character span.
 */
typedef struct {
  uint64_t start;
  uint64_t end;
} SfSpan;

typedef struct {
  double p;
  uint64_t n;
  uint64_t d_left;
  uint64_t d_right;
  uint64_t seed;
} SfAugmentParams;

typedef struct {
  double f1;
  double em;
  double recall;
  /**
   * DRA at the requested cut-off, over answerable questions.
   */
  double dra;
  uint64_t n_questions;
  uint64_t n_answerable;
} SfEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Free the result
 * with [`sf_string_free`].
 */
char *sf_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void sf_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Loads a dataset. `format` is "techqa", "squad" or "canonical";
 * `documents` is required for techqa and ignored otherwise.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
SfStatus sf_dataset_load(const char *path,
                         const char *documents,
                         const char *format,
                         bool repair,
                         SfDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from [`sf_dataset_load`] not yet freed.
 */
void sf_dataset_free(SfDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or null (which yields 0).
 */
uint64_t sf_dataset_question_count(const SfDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or null (which yields 0).
 */
uint64_t sf_dataset_answerable_count(const SfDataset *dataset);

/**
 * Hex sha256 of the dataset's canonical form. Free with [`sf_string_free`].
 *
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
SfStatus sf_dataset_digest(const SfDataset *dataset, char **out);

/**
 * Extends `gold` by `d` characters: negative moves the start left, positive
 * moves the end right, clamped to `[0, doc_len]`.
 *
 * # Safety
 * `out` must be writable.
 */
SfStatus sf_displace_span(SfSpan gold, int64_t d, uint64_t doc_len, SfSpan *out);

/**
 * Character-overlap F1 of two non-empty spans in the same document.
 *
 * # Safety
 * `out` must be writable.
 */
SfStatus sf_char_overlap_f1(SfSpan pred, SfSpan gold, double *out);

/**
 * Fraction of the gold characters covered by `pred`.
 *
 * # Safety
 * `out` must be writable.
 */
SfStatus sf_char_recall(SfSpan pred, SfSpan gold, double *out);

/**
 * Preset parameters: "techqa" or "policyqa".
 *
 * # Safety
 * `name` must be NUL-terminated; `out` must be writable.
 */
SfStatus sf_profile_params(const char *name, uint64_t seed, SfAugmentParams *out);

/**
 * Augments `dataset` and writes augmented.jsonl, stage1.jsonl and
 * stage2.jsonl into `out_dir`, creating it if needed. The number of fuzzy
 * examples generated is stored in `fuzzy_count` when it is not null.
 *
 * # Safety
 * `dataset` and `params` must be valid; `out_dir` NUL-terminated.
 */
SfStatus sf_augment_write(const SfDataset *dataset,
                          const SfAugmentParams *params,
                          const char *out_dir,
                          uint64_t *fuzzy_count);

/**
 * Evaluates a predictions file against `dataset`. `pools` may be null, in
 * which case each question's predicted document is its retrieved list.
 * When `best_per_question` is false, duplicate predictions are an error.
 *
 * # Safety
 * `dataset` must be valid; paths NUL-terminated (or null for `pools`);
 * `out` writable.
 */
SfStatus sf_evaluate_files(const SfDataset *dataset,
                           const char *predictions,
                           const char *pools,
                           uint64_t k,
                           bool best_per_question,
                           SfEvalSummary *out);

/**
 * Reranks a predictions file into a pools file holding the documents of
 * each question's top-`k` spans.
 *
 * # Safety
 * Paths must be NUL-terminated.
 */
SfStatus sf_rerank_files(const char *predictions, uint64_t k, const char *pools_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPANFORGE_H */
