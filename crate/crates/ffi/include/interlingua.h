#ifndef INTERLINGUA_H
#define INTERLINGUA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
enum IlStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  IL_STATUS_OK = 0,
  IL_STATUS_NULL_ARGUMENT = 1,
  IL_STATUS_INVALID_UTF8 = 2,
  IL_STATUS_IO = 3,
  IL_STATUS_CHECKPOINT = 4,
  IL_STATUS_UNKNOWN_LANGUAGE = 5,
  IL_STATUS_INVALID_ARGUMENT = 6,
  IL_STATUS_PANIC = 7,
};
#ifndef __cplusplus
typedef int32_t IlStatus;
#endif // __cplusplus

/**
 * Opaque handle to a loaded model.
 */
typedef struct IlModel IlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint whose vocabularies live in the corpus directory
 * `data_dir`. On success `*out` owns a new handle.
 *
 * # Safety
 * `checkpoint` and `data_dir` must be NUL-terminated strings; `out` must be
 * valid for a pointer write.
 */
IlStatus il_model_load(const char *checkpoint, const char *data_dir, struct IlModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`il_model_load`] and not be used afterwards.
 */
void il_model_free(struct IlModel *model);

/**
 * Number of languages the model serves.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for writing.
 */
IlStatus il_model_language_count(const struct IlModel *model, size_t *out);

/**
 * Code of the `index`-th language, as a string to free with
 * [`il_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` valid for writing.
 */
IlStatus il_model_language(const struct IlModel *model, size_t index, char **out);

/**
 * Greedy translation of `text` (one space-tokenized sentence per line)
 * from `src` to `tgt`. `*out` receives the translations, one per line.
 *
 * # Safety
 * `model` must be a live handle; the strings NUL-terminated; `out` valid
 * for writing.
 */
IlStatus il_translate(const struct IlModel *model,
                      const char *src,
                      const char *tgt,
                      const char *text,
                      size_t max_len,
                      char **out);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void il_string_free(char *s);

/**
 * Unsmoothed corpus BLEU of `n` whitespace-tokenized hypotheses against
 * one reference each.
 *
 * # Safety
 * `hyps` and `refs` must each point to `n` NUL-terminated strings; `out`
 * must be valid for writing.
 */
IlStatus il_bleu(const char *const *hyps, const char *const *refs, size_t n, double *out);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *il_last_error(void);

/**
 * Library version as a static string.
 */
const char *il_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTERLINGUA_H */
