#ifndef ACTCHANGE_H
#define ACTCHANGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ActStatus {
  ACT_STATUS_OK = 0,
  ACT_STATUS_NULL_POINTER = 1,
  ACT_STATUS_INVALID_ARGUMENT = 2,
  ACT_STATUS_DIMENSION = 3,
  ACT_STATUS_DEGENERATE = 4,
  ACT_STATUS_NON_FINITE = 5,
  ACT_STATUS_MISSING_KEY = 6,
  ACT_STATUS_LOAD = 7,
  ACT_STATUS_IO = 8,
  ACT_STATUS_CONFIG = 9,
  ACT_STATUS_CONTRACT = 10,
  /**
   * Average precision is undefined without a relevant item.
   */
  ACT_STATUS_NO_POSITIVES = 11,
  ACT_STATUS_PANIC = 12,
} ActStatus;

/**
 * A loaded checkpoint. Create with `actchange_model_load`, release with
 * `actchange_model_free`.
 */
typedef struct ActModel ActModel;

typedef struct ActModelDims {
  size_t d_seg;
  size_t d_text;
  size_t embed;
  size_t heads;
  size_t mlp_hidden;
  size_t mlp_hidden_layers;
  size_t num_adverbs;
} ActModelDims;

typedef struct ActParamCount {
  size_t attention;
  size_t mlp;
  size_t total;
} ActParamCount;

typedef struct ActCorpusSummary {
  size_t videos;
  size_t train;
  size_t test;
  size_t verbs;
  size_t adverbs;
  bool antonyms;
  size_t d_seg;
  size_t d_pool;
  size_t d_text;
  size_t embedding_keys;
} ActCorpusSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *actchange_version(void);

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *actchange_last_error(void);

/**
 * Loads a checkpoint. On success `*out` owns a new model.
 */
enum ActStatus actchange_model_load(const char *path, struct ActModel **out);

/**
 * Releases a model. Null is a no-op.
 */
void actchange_model_free(struct ActModel *model);

enum ActStatus actchange_model_dims(const struct ActModel *model, struct ActModelDims *out);

/**
 * Eval-mode scores for one video and one verb query. `query` has `d_text`
 * entries and `out_scores` receives `num_adverbs`.
 */
enum ActStatus actchange_model_forward(const struct ActModel *model,
                                       const float *segments,
                                       size_t t,
                                       const uint8_t *mask,
                                       const float *query,
                                       float *out_scores);

/**
 * Scores one video under `num_verbs` queries (`num_verbs x d_text`,
 * row-major). `out_scores` receives `num_verbs x num_adverbs`. The
 * label-free score of an adverb is the column maximum.
 */
enum ActStatus actchange_model_predict_all_verbs(const struct ActModel *model,
                                                 const float *segments,
                                                 size_t t,
                                                 const uint8_t *mask,
                                                 const float *queries,
                                                 size_t num_verbs,
                                                 float *out_scores);

enum ActStatus actchange_count_params(const struct ActModelDims *dims, struct ActParamCount *out);

/**
 * Average precision of one ranking (descending score, ties by position).
 * `relevant` holds one byte per item, nonzero meaning relevant.
 */
enum ActStatus actchange_average_precision(const double *scores,
                                           const uint8_t *relevant,
                                           size_t n,
                                           double *out);

/**
 * Action-change geometry from raw embeddings of length `dim`. `d` is the
 * distance between `phrase` ("v a") and `contrast` ("v h(a)", or "v" without
 * antonyms); `delta` is `d` times the cosine of `verb` and `adverb`.
 */
enum ActStatus actchange_delta(const float *phrase,
                               const float *contrast,
                               const float *verb,
                               const float *adverb,
                               size_t dim,
                               double *out_d,
                               double *out_delta);

/**
 * Runs the full corpus loader validation on a directory holding
 * vocab.json, manifest.jsonl and features.bin, and checks the text
 * embeddings (null `embeddings` means `<corpus_dir>/text_embeddings.jsonl`).
 */
enum ActStatus actchange_validate_corpus(const char *corpus_dir,
                                         const char *embeddings,
                                         struct ActCorpusSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTCHANGE_H */
