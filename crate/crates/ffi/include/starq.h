#ifndef STARQ_H
#define STARQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define SQ_OK 0

/**
 * I/O, parse, or manifest failure; details via `sq_last_error`.
 */
#define SQ_ERR_LOAD 1

/**
 * The query classified as intractable.
 */
#define SQ_INTRACTABLE 2

/**
 * No known pipeline applies (unknown classification).
 */
#define SQ_UNKNOWN 3

/**
 * Null pointer or otherwise invalid argument.
 */
#define SQ_ERR_ARGUMENT 4

/**
 * The requested index lies past the last answer.
 */
#define SQ_PAST_END 5

/**
 * Engine construction failed (for example, answer-count overflow).
 */
#define SQ_ERR_BUILD 6

/**
 * Internal panic; a bug.
 */
#define SQ_ERR_INTERNAL 7

/**
 * Opaque workspace handle.
 */
typedef struct SqWorkspace {
  uint8_t _private[0];
} SqWorkspace;

/**
 * Opaque engine handle.
 */
typedef struct SqEngine {
  uint8_t _private[0];
} SqEngine;

/**
 * Message of the most recent failure on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *sq_last_error(void);

/**
 * Opens a workspace manifest and classifies its query. On success stores a
 * handle in `out` and returns SQ_OK; classification is available via
 * `sq_workspace_classify_json`.
 */
int sq_workspace_open(const char *manifest_path, struct SqWorkspace **out);

/**
 * Releases a workspace handle.
 */
void sq_workspace_free(struct SqWorkspace *ws);

/**
 * Writes the certificate JSON to `out`. Returns SQ_OK, SQ_INTRACTABLE, or
 * SQ_UNKNOWN according to the verdict (the JSON is produced in every case).
 */
int sq_workspace_classify_json(const struct SqWorkspace *ws, char **out);

/**
 * Builds the direct-access engine for a tractable workspace. `bigint`
 * non-zero selects arbitrary-precision answer counts.
 */
int sq_workspace_build(const struct SqWorkspace *ws, int bigint, struct SqEngine **out);

/**
 * Releases an engine handle.
 */
void sq_engine_free(struct SqEngine *engine);

/**
 * Writes the answer count as a decimal string (counts can exceed 64 bits in
 * big-integer mode).
 */
int sq_engine_count(const struct SqEngine *engine, char **out);

/**
 * Writes the i-th answer (1-based) as a CSV line. Returns SQ_PAST_END when
 * the index exceeds the answer count.
 */
int sq_engine_get_csv(const struct SqEngine *engine,
                      const struct SqWorkspace *ws,
                      uint64_t index,
                      char **out);

/**
 * Releases a string produced by this library.
 */
void sq_string_free(char *s);

#endif  /* STARQ_H */
