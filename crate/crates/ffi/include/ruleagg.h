#ifndef RULEAGG_H
#define RULEAGG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RuleaggStatus {
  RULEAGG_STATUS_OK = 0,
  RULEAGG_STATUS_NULL_POINTER = 1,
  RULEAGG_STATUS_INVALID_UTF8 = 2,
  RULEAGG_STATUS_IO = 3,
  RULEAGG_STATUS_PARSE = 4,
  RULEAGG_STATUS_INVALID_ARGUMENT = 5,
  RULEAGG_STATUS_GROUNDING = 6,
  RULEAGG_STATUS_EMPTY_PREDICTION = 7,
  RULEAGG_STATUS_DEGENERATE_VALUE = 8,
  RULEAGG_STATUS_OUT_OF_RANGE = 9,
  RULEAGG_STATUS_PANIC = 10,
} RuleaggStatus;

typedef enum RuleaggDirection {
  /**
   * `relation(anchor, ?)`
   */
  RULEAGG_DIRECTION_TAIL = 0,
  /**
   * `relation(?, anchor)`
   */
  RULEAGG_DIRECTION_HEAD = 1,
} RuleaggDirection;

typedef enum RuleaggStrategy {
  RULEAGG_STRATEGY_MAX = 0,
  RULEAGG_STRATEGY_MAX_PLUS = 1,
  RULEAGG_STRATEGY_NOISY_OR = 2,
  RULEAGG_STRATEGY_NOISY_OR_TOP_H = 3,
  RULEAGG_STRATEGY_LOGISTIC = 4,
} RuleaggStrategy;

/**
 * Graph, rules and the symbol tables that label them.
 */
typedef struct RuleaggEngine RuleaggEngine;

/**
 * Ranked candidates of one query.
 */
typedef struct RuleaggRanking RuleaggRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ruleagg_last_error(void);

/**
 * New empty engine. Release with `ruleagg_engine_free`.
 */
struct RuleaggEngine *ruleagg_engine_new(void);

void ruleagg_engine_free(struct RuleaggEngine *engine);

/**
 * Adds the triples of a `subject<TAB>relation<TAB>object` file to the graph.
 */
enum RuleaggStatus ruleagg_engine_load_triples(struct RuleaggEngine *engine, const char *path);

/**
 * Adds the rules of a file in the given dialect (`canonical`, `anyburl` or
 * `amie`).
 */
enum RuleaggStatus ruleagg_engine_load_rules(struct RuleaggEngine *engine,
                                             const char *path,
                                             const char *dialect);

size_t ruleagg_engine_num_triples(const struct RuleaggEngine *engine);

/**
 * Number of distinct rules.
 */
size_t ruleagg_engine_num_rules(const struct RuleaggEngine *engine);

/**
 * Writes whether `relation(subject, object)` is in the graph. Unknown labels
 * give false.
 */
enum RuleaggStatus ruleagg_engine_contains(const struct RuleaggEngine *engine,
                                           const char *subject,
                                           const char *relation,
                                           const char *object,
                                           bool *result);

/**
 * Answers one query and writes a ranking handle (release with
 * `ruleagg_ranking_free`). `h` is used by `NOISY_OR_TOP_H` only. Unknown
 * labels give an empty ranking.
 */
enum RuleaggStatus ruleagg_engine_answer(const struct RuleaggEngine *engine,
                                         const char *relation,
                                         const char *anchor,
                                         enum RuleaggDirection direction,
                                         enum RuleaggStrategy strategy,
                                         size_t h,
                                         size_t top_x,
                                         uint64_t seed,
                                         struct RuleaggRanking **ranking);

size_t ruleagg_ranking_len(const struct RuleaggRanking *ranking);

/**
 * Label of the candidate at `index`, or null when out of range. Owned by the
 * ranking.
 */
const char *ruleagg_ranking_label(const struct RuleaggRanking *ranking, size_t index);

/**
 * Primary score of the candidate at `index`.
 */
enum RuleaggStatus ruleagg_ranking_score(const struct RuleaggRanking *ranking,
                                         size_t index,
                                         double *score);

void ruleagg_ranking_free(struct RuleaggRanking *ranking);

/**
 * The scoring functions below take confidences sorted from highest to lowest.
 */
enum RuleaggStatus ruleagg_score_max(const double *confidences, size_t len, double *score);

enum RuleaggStatus ruleagg_score_noisy_or(const double *confidences, size_t len, double *score);

enum RuleaggStatus ruleagg_score_noisy_or_top_h(const double *confidences,
                                                size_t len,
                                                size_t h,
                                                double *score);

enum RuleaggStatus ruleagg_score_logistic(const double *confidences, size_t len, double *score);

/**
 * Largest correlation two Bernoulli variables with marginals `p_i` and `p_j`
 * can have.
 */
enum RuleaggStatus ruleagg_frechet_upper(double p_i, double p_j, double *bound);

/**
 * Masses of the nested realisations of the max-correlation distribution for
 * `n` descending marginals: `z[m]` is the probability that exactly the first
 * `m` rules hold. `z` must have room for `n + 1` values.
 */
enum RuleaggStatus ruleagg_max_corr_z(const double *marginals, size_t n, double *z, size_t z_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RULEAGG_H */
