#ifndef CURATOR_H
#define CURATOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Context-extension stage for [`cur_rope_config`].
 */
typedef enum CurRopeStage {
  CUR_ROPE_STAGE_PRETRAIN = 0,
  CUR_ROPE_STAGE_EXT1 = 1,
  CUR_ROPE_STAGE_EXT2 = 2,
} CurRopeStage;

/**
 * Result of every fallible call.
 */
typedef enum CurStatus {
  CUR_STATUS_OK = 0,
  CUR_STATUS_NULL_ARGUMENT = 1,
  CUR_STATUS_INVALID_ARGUMENT = 2,
  CUR_STATUS_CONFIG = 3,
  CUR_STATUS_IO = 4,
  CUR_STATUS_FORMAT = 5,
  CUR_STATUS_INTEGRITY = 6,
  CUR_STATUS_RUNTIME = 7,
  CUR_STATUS_PANIC = 8,
} CurStatus;

typedef struct CurClassifier CurClassifier;

typedef struct CurDedup CurDedup;

typedef struct CurLrSchedule CurLrSchedule;

typedef struct CurPacked CurPacked;

/**
 * Learning-rate schedule boundaries and rates.
 */
typedef struct CurLrSpec {
  double peak_lr;
  uint64_t warmup_end;
  uint64_t constant_end;
  uint64_t slow_decay_end;
  double slow_decay_lr;
  uint64_t end;
  double final_lr;
} CurLrSpec;

/**
 * Plain RoPE parameters.
 */
typedef struct CurRopeConfig {
  uint32_t seq_len;
  uint32_t head_dim;
  double theta;
} CurRopeConfig;

/**
 * Near-duplicate detection parameters.
 */
typedef struct CurDedupParams {
  uint32_t shingle_width;
  uint32_t num_perm;
  uint32_t bands;
  uint32_t rows;
  double jaccard_threshold;
  uint32_t top_k;
  uint64_t perm_seed;
} CurDedupParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *cur_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cur_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cur_string_free(char *s);

/**
 * Normalizes text (NFC, LF line endings, blank-line collapse, trim).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CurStatus cur_normalize_text(const char *text, char **out);

/**
 * Validates `spec` and creates a schedule handle.
 *
 * # Safety
 * `spec` and `out` must be valid pointers.
 */
enum CurStatus cur_lr_schedule_new(const struct CurLrSpec *spec, struct CurLrSchedule **out);

/**
 * Learning rate at `step`.
 *
 * # Safety
 * `schedule` must be a live handle and `out` a valid pointer.
 */
enum CurStatus cur_lr_schedule_at(const struct CurLrSchedule *schedule, uint64_t step, double *out);

/**
 * # Safety
 * `schedule` must be null or a live handle.
 */
void cur_lr_schedule_free(struct CurLrSchedule *schedule);

/**
 * Loads a classifier file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CurStatus cur_classifier_load(const char *path, struct CurClassifier **out);

/**
 * Probability in [0, 1] that `text` belongs to the positive class.
 *
 * # Safety
 * `clf` must be a live handle, `text` a NUL-terminated string, `out` valid.
 */
enum CurStatus cur_classifier_score(const struct CurClassifier *clf, const char *text, double *out);

/**
 * # Safety
 * `clf` must be null or a live handle.
 */
void cur_classifier_free(struct CurClassifier *clf);

/**
 * Packs `n_docs` token arrays into sequences of `seq_len`, in order.
 *
 * # Safety
 * `docs` and `lens` must each point to `n_docs` entries; `docs[i]` to
 * `lens[i]` tokens. `out` must be valid.
 */
enum CurStatus cur_pack(const uint32_t *const *docs,
                        const size_t *lens,
                        size_t n_docs,
                        uint32_t seq_len,
                        uint32_t pad_id,
                        struct CurPacked **out);

/**
 * Number of packed sequences.
 *
 * # Safety
 * `packed` must be a live handle and `out` valid.
 */
enum CurStatus cur_packed_len(const struct CurPacked *packed, size_t *out);

/**
 * Borrows the tokens of sequence `seq`; valid while the handle lives.
 * `non_pad` receives the count of real tokens before padding.
 *
 * # Safety
 * `packed` must be a live handle; out pointers must be valid.
 */
enum CurStatus cur_packed_tokens(const struct CurPacked *packed,
                                 size_t seq,
                                 const uint32_t **tokens,
                                 size_t *len,
                                 size_t *non_pad);

/**
 * Whether position `i` may attend to position `j` in sequence `seq`.
 *
 * # Safety
 * `packed` must be a live handle and `out` valid.
 */
enum CurStatus cur_packed_mask(const struct CurPacked *packed,
                               size_t seq,
                               size_t i,
                               size_t j,
                               bool *out);

/**
 * # Safety
 * `packed` must be null or a live handle.
 */
void cur_packed_free(struct CurPacked *packed);

/**
 * Writes the RoPE parameters of a stage (head size 128).
 *
 * # Safety
 * `out` must be valid.
 */
enum CurStatus cur_rope_config(enum CurRopeStage stage, struct CurRopeConfig *out);

/**
 * Rotates the `dim`-vector `v` to `position` into `out`. `dim` must be even
 * and equal `cfg.head_dim`.
 *
 * # Safety
 * `cfg` must be valid; `v` and `out` must point to `dim` doubles.
 */
enum CurStatus cur_rope_rotate(const struct CurRopeConfig *cfg,
                               const double *v,
                               size_t dim,
                               uint64_t position,
                               double *out);

/**
 * Default dedup parameters.
 */
struct CurDedupParams cur_dedup_default_params(void);

/**
 * Creates an empty deduplication session.
 *
 * # Safety
 * `params` and `out` must be valid.
 */
enum CurStatus cur_dedup_new(const struct CurDedupParams *params, struct CurDedup **out);

/**
 * Adds a document; its insertion index identifies it afterwards.
 *
 * # Safety
 * `dedup` must be a live handle and `text` a NUL-terminated string.
 */
enum CurStatus cur_dedup_add(struct CurDedup *dedup, const char *text);

/**
 * Clusters every added document; writes the number of clusters.
 *
 * # Safety
 * `dedup` must be a live handle and `n_clusters` valid.
 */
enum CurStatus cur_dedup_run(struct CurDedup *dedup, size_t workers, size_t *n_clusters);

/**
 * Cluster id of the document added at `index`, after [`cur_dedup_run`].
 *
 * # Safety
 * `dedup` must be a live handle and `out` valid.
 */
enum CurStatus cur_dedup_cluster_of(const struct CurDedup *dedup, size_t index, uint64_t *out);

/**
 * # Safety
 * `dedup` must be null or a live handle.
 */
void cur_dedup_free(struct CurDedup *dedup);

/**
 * Runs the full pipeline from a TOML config. `workers` of 0 keeps the
 * configured value.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum CurStatus cur_pipeline_run(const char *config_path, size_t workers);

/**
 * Recomputes the report of a work directory as a JSON string.
 *
 * # Safety
 * `work_dir` must be a NUL-terminated string and `json` valid.
 */
enum CurStatus cur_pipeline_report(const char *work_dir, char **json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CURATOR_H */
