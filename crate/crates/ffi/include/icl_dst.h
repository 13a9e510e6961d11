#ifndef ICL_DST_H
#define ICL_DST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum IclStatus {
  ICL_STATUS_OK = 0,
  ICL_STATUS_NULL_ARGUMENT = 1,
  ICL_STATUS_INVALID_UTF8 = 2,
  ICL_STATUS_INVALID_JSON = 3,
  ICL_STATUS_INVALID_INPUT = 4,
  ICL_STATUS_AMBIGUOUS = 5,
  ICL_STATUS_PANIC = 99,
} IclStatus;

/*
 Cosine index over example embeddings.
 */
typedef struct IclIndex IclIndex;

/*
 Canonical-form map used to normalize predicted values.
 */
typedef struct IclNormalizer IclNormalizer;

/*
 Parsed domain and slot inventory.
 */
typedef struct IclSchema IclSchema;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. Valid until
 the next call into this library on the same thread.
 */
const char *icl_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *icl_version(void);

/*
 Releases a string returned through an `out` parameter. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void icl_string_free(char *s);

/*
 Parses and validates a schema document.

 # Safety
 `schema_json` must be NUL-terminated; `out` must be writable.
 */
enum IclStatus icl_schema_new(const char *schema_json, struct IclSchema **out);

/*
 # Safety
 `schema` must come from [`icl_schema_new`] and not have been freed. NULL is ignored.
 */
void icl_schema_free(struct IclSchema *schema);

/*
 Parses a completion into `{"parsed": delta}` or
 `{"rejected": {"reason", "span"}}` JSON.

 # Safety
 Pointers must be valid; `text_in` NUL-terminated.
 */
enum IclStatus icl_parse_completion(const struct IclSchema *schema,
                                    const char *text_in,
                                    char **out_json);

/*
 Renders a delta as its canonical update line.

 # Safety
 `delta_json` must be NUL-terminated; `out` must be writable.
 */
enum IclStatus icl_canonicalize_completion(const char *delta_json, char **out);

/*
 Applies a delta to a state; both JSON. Fails with `INVALID_INPUT` on an
 unresolvable reference.

 # Safety
 Inputs must be NUL-terminated; `out_state_json` must be writable.
 */
enum IclStatus icl_apply_state_change(const char *state_json,
                                      const char *delta_json,
                                      char **out_state_json);

/*
 Minimal delta turning `prev` into `next`.

 # Safety
 Inputs must be NUL-terminated; `out_delta_json` must be writable.
 */
enum IclStatus icl_diff_states(const char *prev_json, const char *next_json, char **out_delta_json);

/*
 Delta similarity in [0, 1].

 # Safety
 Inputs must be NUL-terminated; `out` must be writable.
 */
enum IclStatus icl_sim_f1(const char *a_json, const char *b_json, double *out);

/*
 Integer similarity in [0, 100] between two strings.

 # Safety
 Inputs must be NUL-terminated; `out` must be writable.
 */
enum IclStatus icl_fuzzy_ratio(const char *a, const char *b, uint32_t *out);

/*
 `cond_logprob - beta * prior_logprob`.
 */
double icl_pmi_score(double cond_logprob, double prior_logprob, double beta);

/*
 Builds a normalizer. `gold_counts_json` may be NULL; otherwise it maps
 slot names to `{surface: count}`. With `strict` non-zero an ambiguous
 surface fails the call with `AMBIGUOUS`.

 # Safety
 Pointers must be valid; strings NUL-terminated; `out` writable.
 */
enum IclStatus icl_normalizer_new(const struct IclSchema *schema,
                                  const char *database_json,
                                  const char *ontology_json,
                                  const char *gold_counts_json,
                                  int32_t strict,
                                  struct IclNormalizer **out);

/*
 # Safety
 `map` must come from [`icl_normalizer_new`] and not have been freed. NULL is ignored.
 */
void icl_normalizer_free(struct IclNormalizer *map);

/*
 Rewrites every literal of a delta to its preferred surface form.

 # Safety
 Pointers must be valid; `delta_json` NUL-terminated; `out` writable.
 */
enum IclStatus icl_normalize_prediction(const struct IclNormalizer *map,
                                        const char *delta_json,
                                        char **out_delta_json);

/*
 The normalizer's link and ambiguity report as JSON.

 # Safety
 `map` must be valid; `out` writable.
 */
enum IclStatus icl_normalizer_audit(const struct IclNormalizer *map, char **out_json);

/*
 Builds an index from a JSON array of `{"id", "vector"}` records.

 # Safety
 `records_json` must be NUL-terminated; `out` writable.
 */
enum IclStatus icl_index_new(const char *records_json, struct IclIndex **out);

/*
 # Safety
 `index` must come from [`icl_index_new`] and not have been freed. NULL is ignored.
 */
void icl_index_free(struct IclIndex *index);

/*
 Diversity-aware selection of `k` examples from the `window` nearest to
 the query vector (a JSON number array). `alpha = 0` gives plain top-k.
 Writes `{"members": [{"id", "relevance", "marginal"}]}`.

 # Safety
 Pointers must be valid; `query_json` NUL-terminated; `out_json` writable.
 */
enum IclStatus icl_index_select(const struct IclIndex *index,
                                const char *query_json,
                                size_t k,
                                double alpha,
                                size_t window,
                                char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICL_DST_H */
