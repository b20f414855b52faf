#ifndef PVMINER_H
#define PVMINER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
typedef enum PvStatus {
  PV_STATUS_OK = 0,
  PV_STATUS_NULL_ARGUMENT = 1,
  PV_STATUS_INVALID_UTF8 = 2,
  PV_STATUS_INVALID_ARGUMENT = 3,
  PV_STATUS_IO = 4,
  PV_STATUS_INVALID_CODEBOOK = 5,
  PV_STATUS_INTERNAL = 6,
} PvStatus;

// Opaque codebook handle.
typedef struct PvCodebook PvCodebook;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Owned by the library.
const char *pv_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not yet freed.
void pv_string_free(char *s);

// Creates a handle for the built-in codebook.
//
// # Safety
// `out` must be null or valid for writes.
enum PvStatus pv_codebook_default(struct PvCodebook **out);

// Loads a codebook from a TOML file.
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or valid for writes.
enum PvStatus pv_codebook_load(const char *path, struct PvCodebook **out);

// Parses a codebook from TOML text.
//
// # Safety
// `source` must be null or a NUL-terminated string; `out` must be null or valid for writes.
enum PvStatus pv_codebook_from_toml(const char *source, struct PvCodebook **out);

// Releases a codebook handle. Null is ignored.
//
// # Safety
// `cb` must be null or a handle from this library that has not been freed.
void pv_codebook_free(struct PvCodebook *cb);

// Number of Codes in the codebook.
//
// # Safety
// `cb` must be null or a live handle; `out` must be null or valid for writes.
enum PvStatus pv_codebook_code_count(const struct PvCodebook *cb, size_t *out);

// The codebook serialized as TOML.
//
// # Safety
// `cb` must be null or a live handle; `out` must be null or valid for writes.
enum PvStatus pv_codebook_to_toml(const struct PvCodebook *cb, char **out);

// Whether `subcode` (or an alias of it) belongs to `code`.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
enum PvStatus pv_codebook_is_valid_pair(const struct PvCodebook *cb,
                                        const char *code,
                                        const char *subcode,
                                        bool *out);

// Whether `code` may be assigned to a message with `direction` ("Y" or "N").
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
enum PvStatus pv_codebook_is_direction_consistent(const struct PvCodebook *cb,
                                                  const char *code,
                                                  const char *direction,
                                                  bool *out);

// Validates a raw completion for a message. Writes a JSON object with
// `outcome`, `failure_class`, `annotations` and `issues`.
//
// # Safety
// String arguments must be null or NUL-terminated; `out_json` must be null or valid for writes.
enum PvStatus pv_validate_completion(const struct PvCodebook *cb,
                                     const char *completion,
                                     const char *message,
                                     const char *direction,
                                     bool strict,
                                     char **out_json);

// Validates a completion leniently and writes the accepted annotations in
// canonical serialized form.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
enum PvStatus pv_canonicalize_completion(const struct PvCodebook *cb,
                                         const char *completion,
                                         const char *message,
                                         const char *direction,
                                         char **out);

// Renders a zero-shot prompt. `template` is "baseline" or "engineered".
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be null or valid for writes.
enum PvStatus pv_render_prompt(const struct PvCodebook *cb,
                               const char *template_,
                               const char *message,
                               const char *direction,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVMINER_H */
