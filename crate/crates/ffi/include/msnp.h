#ifndef MSNP_H
#define MSNP_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum MsnpStatus {
  MSNP_STATUS_OK = 0,
  // A required pointer was null.
  MSNP_STATUS_NULL_ARGUMENT = 1,
  // An input string was not UTF-8.
  MSNP_STATUS_INVALID_UTF8 = 2,
  // An input document (CSV, JSON, rules, config) did not parse.
  MSNP_STATUS_PARSE = 3,
  // Inputs parsed but the computation rejected them.
  MSNP_STATUS_INVALID = 4,
  // No recommender or no informative context: nothing to report.
  MSNP_STATUS_NO_RESULT = 5,
  MSNP_STATUS_PANIC = 6,
} MsnpStatus;

// A trained predictor. Opaque to C.
typedef struct MsnpPredictor MsnpPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a predictor from a records CSV (`qid,ctype=value;...` rows with a
// header line).
//
// # Safety
// `records_csv` is a NUL-terminated string; `out` is valid for writes.
enum MsnpStatus msnp_predictor_from_records_csv(const char *records_csv,
                                                struct MsnpPredictor **out);

// Replaces the predictor's importance, filter and override rules with the
// ones in `rules_text`.
//
// # Safety
// `predictor` comes from [`msnp_predictor_from_records_csv`]; `rules_text`
// is a NUL-terminated string.
enum MsnpStatus msnp_predictor_set_rules(struct MsnpPredictor *predictor, const char *rules_text);

// Ranks candidate queries for `contexts` (`ctype=value;...`). Writes a JSON
// array of `{"qid", "score"}` objects, best first.
//
// # Safety
// `predictor` is a live handle; `contexts` is a NUL-terminated string;
// `ranking_json` is valid for writes.
enum MsnpStatus msnp_predictor_predict(const struct MsnpPredictor *predictor,
                                       const char *contexts,
                                       char **ranking_json);

// Releases a predictor. Null is ignored.
//
// # Safety
// `predictor` is null or a handle not yet freed.
void msnp_predictor_free(struct MsnpPredictor *predictor);

// Runs one discovery simulation. `config_text` holds `key = value` lines
// (empty for defaults); `model` is `pull`, `push`, `prefpush` or
// `hybrid<fraction>`. Writes the result as a JSON object.
//
// # Safety
// Both inputs are NUL-terminated strings; `result_json` is valid for writes.
enum MsnpStatus msnp_simulate(const char *config_text, const char *model, char **result_json);

// Pearson similarity of two RDs given as JSON objects.
//
// # Safety
// Both inputs are NUL-terminated strings; `out` is valid for writes.
enum MsnpStatus msnp_rd_similarity(const char *rd_a_json, const char *rd_b_json, double *out);

// Trust in `provider`'s service from proximal strangers. `proximal_json` is
// a JSON array of RDs; `scheme` is `proposed`, `naive`, `exponly` or
// `creditonly`. Writes the verdict as a JSON object.
//
// # Safety
// All string inputs are NUL-terminated; `verdict_json` is valid for writes.
enum MsnpStatus msnp_trust_public(const char *provider,
                                  const char *sname,
                                  const char *stype,
                                  const char *proximal_json,
                                  const char *scheme,
                                  char **verdict_json);

// Message for the last failure on this thread, or null if none. Owned by
// the library; do not free.
const char *msnp_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or came from this library and was not freed yet.
void msnp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSNP_H */
