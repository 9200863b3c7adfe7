#ifndef REBALANCE_H
#define REBALANCE_H

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum RbStatus {
  RB_STATUS_OK = 0,
  RB_STATUS_NULL_POINTER = 1,
  RB_STATUS_INVALID_INPUT = 2,
  RB_STATUS_PARSE = 3,
  RB_STATUS_IO = 4,
  RB_STATUS_DEGENERATE_SPLIT = 5,
  RB_STATUS_DEGENERATE_STRATUM = 6,
  RB_STATUS_MISSING_ANNOTATION = 7,
  RB_STATUS_POOL_EXHAUSTED = 8,
  RB_STATUS_DIVERGENCE = 9,
  RB_STATUS_LINK_VALIDITY = 10,
  RB_STATUS_THEOREM_VIOLATION = 11,
  RB_STATUS_PANIC = 99,
} RbStatus;

/**
 * Minibatch balance modes accepted by [`rb_train`].
 */
typedef enum RbBalanceMode {
  RB_BALANCE_MODE_UNBALANCED = 0,
  RB_BALANCE_MODE_CLASS_SAMPLING = 1,
  RB_BALANCE_MODE_GROUP_SAMPLING = 2,
  RB_BALANCE_MODE_SPURIOUS_SAMPLING = 3,
  RB_BALANCE_MODE_CLASS_SUBSET = 4,
  RB_BALANCE_MODE_GROUP_SUBSET = 5,
} RbBalanceMode;

/**
 * Optimizer choices for [`RbOptimConfig::optimizer`].
 */
typedef enum RbOptimizer {
  RB_OPTIMIZER_SGD = 0,
  RB_OPTIMIZER_ADAM_W = 1,
} RbOptimizer;

/**
 * Schedule choices for [`RbOptimConfig::schedule`].
 */
typedef enum RbSchedule {
  RB_SCHEDULE_CONSTANT = 0,
  RB_SCHEDULE_COSINE = 1,
  RB_SCHEDULE_LINEAR = 2,
} RbSchedule;

/**
 * Opaque dataset handle.
 */
typedef struct RbDataset RbDataset;

/**
 * Opaque linear head handle.
 */
typedef struct RbHead RbHead;

/**
 * Optimizer settings. `optimizer` and `schedule` hold `RbOptimizer` and
 * `RbSchedule` values; anything else is rejected as invalid input.
 */
typedef struct RbOptimConfig {
  uint32_t optimizer;
  uint32_t schedule;
  double lr0;
  double weight_decay;
  size_t total_steps;
  size_t batch_size;
  uint64_t seed;
} RbOptimConfig;

typedef struct RbSyntheticSpec {
  size_t n;
  size_t d;
  double minority_rate;
  double core_magnitude;
  double core_noise;
  double spurious_magnitude;
  double spurious_noise;
  double junk_scale;
  double class_prior;
  uint64_t seed;
} RbSyntheticSpec;

/**
 * Summary filled by [`rb_evaluate`]. `worst_group_accuracy` is NaN when
 * the dataset has no spurious labels.
 */
typedef struct RbMetrics {
  double worst_group_accuracy;
  double average_accuracy;
  size_t total;
  size_t total_correct;
  /**
   * Number of non-empty groups.
   */
  size_t groups;
} RbMetrics;

typedef struct RbTheoremReport {
  size_t trials;
  double max_abs_deviation;
  double min_gap;
} RbTheoremReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *rb_last_error_message(void);

/**
 * Default optimizer settings: SGD, lr 3e-3, cosine, weight decay 1e-4,
 * 250 steps, batch 32, seed 0.
 */
struct RbOptimConfig rb_optim_config_default(void);

struct RbSyntheticSpec rb_synthetic_spec_default(void);

/**
 * Loads a GEMB file (CSV when the path ends in `.csv`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum RbStatus rb_dataset_load(const char *path, struct RbDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum RbStatus rb_dataset_save(const struct RbDataset *ds, const char *path);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void rb_dataset_free(struct RbDataset *ds);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t rb_dataset_len(const struct RbDataset *ds);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t rb_dataset_dim(const struct RbDataset *ds);

/**
 * # Safety
 * `spec` must point to a valid `RbSyntheticSpec` and `out` must be writable.
 */
enum RbStatus rb_synth_generate(const struct RbSyntheticSpec *spec, struct RbDataset **out);

/**
 * Seeded split into `count` parts; `out_parts` receives `count` handles.
 *
 * # Safety
 * `fractions` must hold `count` values and `out_parts` room for `count`
 * pointers.
 */
enum RbStatus rb_dataset_split(const struct RbDataset *ds,
                               const double *fractions,
                               size_t count,
                               uint64_t seed,
                               struct RbDataset **out_parts);

/**
 * Trains a fresh head under `mode` (an `RbBalanceMode` value).
 *
 * # Safety
 * Handles and pointers must be valid; `out` must be writable.
 */
enum RbStatus rb_train(const struct RbDataset *ds,
                       uint32_t mode,
                       const struct RbOptimConfig *config,
                       struct RbHead **out);

/**
 * Group-balanced retraining of a fresh head on `heldout`.
 *
 * # Safety
 * Handles and pointers must be valid; `out` must be writable.
 */
enum RbStatus rb_dfr(const struct RbDataset *heldout,
                     const struct RbOptimConfig *config,
                     struct RbHead **out);

/**
 * Class-balanced retraining of a fresh head on `heldout`.
 *
 * # Safety
 * Handles and pointers must be valid; `out` must be writable.
 */
enum RbStatus rb_cb_retrain(const struct RbDataset *heldout,
                            const struct RbOptimConfig *config,
                            struct RbHead **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum RbStatus rb_head_load(const char *path, struct RbHead **out);

/**
 * # Safety
 * `head` must be a live handle and `path` NUL-terminated.
 */
enum RbStatus rb_head_save(const struct RbHead *head, const char *path);

/**
 * # Safety
 * `head` must be null or a handle not yet freed.
 */
void rb_head_free(struct RbHead *head);

/**
 * Predicted class of one embedding of length `dim`.
 *
 * # Safety
 * `embedding` must hold `dim` values and `out_class` must be writable.
 */
enum RbStatus rb_head_predict(const struct RbHead *head,
                              const double *embedding,
                              size_t dim,
                              uint32_t *out_class);

/**
 * Scores `head` on `ds`. When `group_accuracy` is non-null, entry `g`
 * for `g < group_len` receives the accuracy of group `g`, or NaN when the
 * group is empty or the dataset has no spurious labels.
 *
 * # Safety
 * Handles must be live, `out` writable, and `group_accuracy` null or
 * holding `group_len` slots.
 */
enum RbStatus rb_evaluate(const struct RbHead *head,
                          const struct RbDataset *ds,
                          struct RbMetrics *out,
                          double *group_accuracy,
                          size_t group_len);

/**
 * # Safety
 * `out` must be writable.
 */
enum RbStatus rb_verify_theorem(size_t trials, uint64_t seed, struct RbTheoremReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REBALANCE_H */
