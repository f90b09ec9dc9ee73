#ifndef APEQE_H
#define APEQE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  APEQE_STATUS_OK = 0,
  APEQE_STATUS_NULL_POINTER = 1,
  APEQE_STATUS_INVALID_UTF8 = 2,
  APEQE_STATUS_INVALID_ARGUMENT = 3,
  APEQE_STATUS_IO = 4,
  APEQE_STATUS_DECODE = 5,
  APEQE_STATUS_PANIC = 6,
} ApeqeStatus;

/**
 * Learned BPE merges.
 */
typedef struct ApeqeBpe ApeqeBpe;

/**
 * A weighted ensemble loaded from a manifest.
 */
typedef struct ApeqeEnsemble ApeqeEnsemble;

/**
 * One model checkpoint.
 */
typedef struct ApeqeModel ApeqeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *apeqe_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void apeqe_string_free(char *s);

/**
 * OK/BAD tags for each MT line against the matching post-edit line, one
 * space-separated line per sentence.
 *
 * # Safety
 * `mt` and `pe` must be NUL-terminated strings; `out` must be writable.
 */
ApeqeStatus apeqe_qe_tags(const char *mt,
                          const char *pe,
                          bool shifts,
                          bool case_sensitive,
                          char **out);

/**
 * Corpus TER of newline-separated hypotheses against references.
 *
 * # Safety
 * `hyps` and `refs` must be NUL-terminated strings; `out` must be writable.
 */
ApeqeStatus apeqe_ter(const char *hyps,
                      const char *refs,
                      bool shifts,
                      bool case_sensitive,
                      double *out);

/**
 * Corpus BLEU of newline-separated hypotheses against references.
 *
 * # Safety
 * `hyps` and `refs` must be NUL-terminated strings; `out` must be writable.
 */
ApeqeStatus apeqe_bleu(const char *hyps, const char *refs, double *out);

/**
 * F1-Mult of predicted against gold tag lines.
 *
 * # Safety
 * `pred` and `gold` must be NUL-terminated strings; `out` must be writable.
 */
ApeqeStatus apeqe_f1_mult(const char *pred, const char *gold, double *out);

/**
 * Loads a merges file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
ApeqeStatus apeqe_bpe_load(const char *path, ApeqeBpe **out);

/**
 * Segments one tokenized line with the model's marker.
 *
 * # Safety
 * `bpe` must be a live handle; `line` a NUL-terminated string; `out` writable.
 */
ApeqeStatus apeqe_bpe_apply(const ApeqeBpe *bpe, const char *line, char **out);

/**
 * # Safety
 * `bpe` must come from [`apeqe_bpe_load`] and not have been freed. Null is ignored.
 */
void apeqe_bpe_free(ApeqeBpe *bpe);

/**
 * Loads a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
ApeqeStatus apeqe_model_load(const char *path, ApeqeModel **out);

/**
 * Number of `|`-separated fields each input token must carry.
 *
 * # Safety
 * `model` must be a live handle or null (which yields 0).
 */
size_t apeqe_model_input_arity(const ApeqeModel *model);

/**
 * Beam-decodes one factored input line. With a non-null `desegment`
 * marker, subword pieces are joined back into words.
 *
 * # Safety
 * `model` must be a live handle; `line` a NUL-terminated string;
 * `desegment` null or a NUL-terminated string; `out` writable.
 */
ApeqeStatus apeqe_model_translate(const ApeqeModel *model,
                                  const char *line,
                                  size_t beam,
                                  size_t max_len,
                                  const char *desegment,
                                  char **out);

/**
 * # Safety
 * `model` must come from [`apeqe_model_load`] and not have been freed. Null is ignored.
 */
void apeqe_model_free(ApeqeModel *model);

/**
 * Loads an ensemble manifest and its checkpoints. Relative checkpoint
 * paths resolve against the manifest's directory.
 *
 * # Safety
 * `manifest` must be a NUL-terminated string; `out` must be writable.
 */
ApeqeStatus apeqe_ensemble_load(const char *manifest, ApeqeEnsemble **out);

/**
 * Number of members, or 0 for null.
 *
 * # Safety
 * `ensemble` must be a live handle or null.
 */
size_t apeqe_ensemble_size(const ApeqeEnsemble *ensemble);

/**
 * Replaces the member weights; `len` must equal the member count.
 *
 * # Safety
 * `ensemble` must be a live handle; `weights` must point to `len` doubles.
 */
ApeqeStatus apeqe_ensemble_set_weights(ApeqeEnsemble *ensemble, const double *weights, size_t len);

/**
 * Decodes one sentence. `inputs[k]` is member k's factored input line.
 *
 * # Safety
 * `ensemble` must be a live handle; `inputs` must point to `len`
 * NUL-terminated strings; `desegment` null or a NUL-terminated string;
 * `out` writable.
 */
ApeqeStatus apeqe_ensemble_decode(const ApeqeEnsemble *ensemble,
                                  const char *const *inputs,
                                  size_t len,
                                  size_t beam,
                                  size_t max_len,
                                  const char *desegment,
                                  char **out);

/**
 * # Safety
 * `ensemble` must come from [`apeqe_ensemble_load`] and not have been freed. Null is ignored.
 */
void apeqe_ensemble_free(ApeqeEnsemble *ensemble);

/**
 * Library version as a static string.
 */
const char *apeqe_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APEQE_H */
