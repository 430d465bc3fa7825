#ifndef ASPRE_H
#define ASPRE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Report layouts accepted by [`aspre_session_explain`].
 */
typedef enum AspreFormat {
  ASPRE_FORMAT_JSON = 0,
  ASPRE_FORMAT_MARKDOWN = 1,
} AspreFormat;

/**
 * Outcome of a call. Values 1 to 5 match the command-line exit codes.
 */
typedef enum AspreStatus {
  ASPRE_STATUS_OK = 0,
  ASPRE_STATUS_RUNTIME = 1,
  ASPRE_STATUS_INVALID_ARGUMENT = 2,
  ASPRE_STATUS_MISSING_INPUT = 3,
  ASPRE_STATUS_SCHEMA = 4,
  ASPRE_STATUS_INCONSISTENT = 5,
  ASPRE_STATUS_PANIC = 6,
} AspreStatus;

/**
 * A loaded model with the data it scores against.
 */
typedef struct AspreSession AspreSession;

/**
 * A read-only embedding store.
 */
typedef struct AspreStore AspreStore;

/**
 * Score of one (user, item) pair and its additive parts.
 */
typedef struct AsprePrediction {
  /**
   * Clamped to the rating range.
   */
  double s_hat;
  double pre_clamp;
  double bias_term;
  double implicit_term;
  double explicit_term;
  bool cold_user;
  bool cold_item;
} AsprePrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *aspre_version(void);

/**
 * Message of the last failed call on this thread, or null. Owned by the library.
 */
const char *aspre_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void aspre_string_free(char *s);

/**
 * Opens a session from a run configuration file; relative paths in it are
 * resolved against the file's directory.
 *
 * # Safety
 * `config_path` is a NUL-terminated string; `out` is writable.
 */
enum AspreStatus aspre_session_open(const char *config_path, struct AspreSession **out);

/**
 * # Safety
 * `session` is null or a live handle from [`aspre_session_open`].
 */
void aspre_session_free(struct AspreSession *session);

/**
 * Number of aspects the session's model scores.
 *
 * # Safety
 * `session` is a live handle; `out` is writable.
 */
enum AspreStatus aspre_session_num_aspects(const struct AspreSession *session, size_t *out);

/**
 * Scores one pair. Unknown users or items are scored as cold start.
 *
 * # Safety
 * `session` is a live handle, `user` and `item` NUL-terminated strings, `out` writable.
 */
enum AspreStatus aspre_session_predict(const struct AspreSession *session,
                                       const char *user,
                                       const char *item,
                                       struct AsprePrediction *out);

/**
 * Renders the per-aspect explanation of one pair; `format` is an [`AspreFormat`] value.
 * Free the result with [`aspre_string_free`].
 *
 * # Safety
 * As for [`aspre_session_predict`]; `out` receives a new string.
 */
enum AspreStatus aspre_session_explain(const struct AspreSession *session,
                                       const char *user,
                                       const char *item,
                                       uint32_t format,
                                       char **out);

/**
 * Opens an embedding store directory.
 *
 * # Safety
 * `dir` is a NUL-terminated string; `out` is writable.
 */
enum AspreStatus aspre_store_open(const char *dir, struct AspreStore **out);

/**
 * # Safety
 * `store` is null or a live handle from [`aspre_store_open`].
 */
void aspre_store_free(struct AspreStore *store);

/**
 * Number of reviews in the store.
 *
 * # Safety
 * `store` is a live handle; `out` is writable.
 */
enum AspreStatus aspre_store_len(const struct AspreStore *store, size_t *out);

/**
 * Row count (start and end markers included) and width of one review's embeddings.
 *
 * # Safety
 * `store` is a live handle, `review_id` a NUL-terminated string, both outputs writable.
 */
enum AspreStatus aspre_store_shape(const struct AspreStore *store,
                                   const char *review_id,
                                   size_t *rows,
                                   size_t *dim);

/**
 * Checks stored row norms against the checksum sidecar; `checked` receives the review count.
 *
 * # Safety
 * `store` is a live handle; `checked` is writable.
 */
enum AspreStatus aspre_store_verify(const struct AspreStore *store,
                                    double tolerance,
                                    size_t *checked);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASPRE_H */
