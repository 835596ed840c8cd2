/* C interface to the marco solver library. */

#ifndef MARCO_H
#define MARCO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call across the C boundary.
typedef enum MarcoStatus {
  // The call succeeded.
  MARCO_STATUS_OK = 0,
  // A required pointer argument was null.
  MARCO_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  MARCO_STATUS_INVALID_UTF8 = 2,
  // The input was rejected (bad value, parse failure, wrong problem).
  MARCO_STATUS_INVALID_INPUT = 3,
  // The filesystem failed.
  MARCO_STATUS_IO = 4,
  // The solver failed at runtime (including caught panics).
  MARCO_STATUS_RUNTIME = 5,
} MarcoStatus;

// Opaque graph instance handle.
typedef struct MarcoInstance MarcoInstance;

// Opaque trained-policy handle.
typedef struct MarcoPolicy MarcoPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread, or null if no call has failed
// yet. Valid until the next failing call on the same thread; do not
// free it.
const char *marco_last_error_message(void);

// Generate a random instance.
//
// `problem` is `"mc"`, `"mis"` (Erdős–Rényi with edge probability
// `p`) or `"tsp"` (uniform points in the unit square; `p` is
// ignored). The result is deterministic in the arguments.
enum MarcoStatus marco_instance_generate(const char *problem,
                                         size_t n,
                                         double p,
                                         uint64_t seed,
                                         struct MarcoInstance **out);

// Load an instance from a native-format or DIMACS file.
enum MarcoStatus marco_instance_load(const char *path, struct MarcoInstance **out);

// Write an instance in the native format.
enum MarcoStatus marco_instance_save(const struct MarcoInstance *instance, const char *path);

// Number of nodes, or 0 if `instance` is null.
size_t marco_instance_n(const struct MarcoInstance *instance);

// Number of edges, or 0 if `instance` is null.
size_t marco_instance_edge_count(const struct MarcoInstance *instance);

// Release an instance handle. Null is a no-op.
void marco_instance_free(struct MarcoInstance *instance);

// Load a trained policy checkpoint.
enum MarcoStatus marco_policy_load(const char *path, struct MarcoPolicy **out);

// The problem a policy was trained for: `"mc"`, `"mis"` or `"tsp"`.
// The string is static; do not free it. Null input yields null.
const char *marco_policy_problem(const struct MarcoPolicy *policy);

// Release a policy handle. Null is a no-op.
void marco_policy_free(struct MarcoPolicy *policy);

// Solve `instance` with `policy` (improvement search for mc/mis,
// constructive search for tsp) and return the full result as a JSON
// document in `out_json`.
//
// `memory_mode` is `"none"`, `"op-based"`, `"independent"` or
// `"shared"`; null keeps the default (shared). `threads`, `k` and
// `max_steps` override the problem-sized defaults when nonzero.
// Results are deterministic in `(instance, policy, seed, settings)`.
enum MarcoStatus marco_solve_json(const struct MarcoPolicy *policy,
                                  const struct MarcoInstance *instance,
                                  const char *memory_mode,
                                  size_t threads,
                                  size_t k,
                                  size_t max_steps,
                                  uint64_t seed,
                                  char **out_json);

// Release a string returned by this library. Null is a no-op.
void marco_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARCO_H */
