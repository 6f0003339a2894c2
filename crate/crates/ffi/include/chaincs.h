#ifndef CHAINCS_H
#define CHAINCS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChaincsStatus {
  CHAINCS_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an out-of-range argument.
   */
  CHAINCS_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The input failed a structural or numerical validation.
   */
  CHAINCS_STATUS_VALIDATION = 2,
  /**
   * The run completed but a theorem check failed.
   */
  CHAINCS_STATUS_THEOREM_FAILED = 3,
  CHAINCS_STATUS_IO = 4,
  CHAINCS_STATUS_PANIC = 5,
} ChaincsStatus;

/**
 * Opaque nilpotent Lie algebra.
 */
typedef struct ChaincsAlgebra ChaincsAlgebra;

/**
 * Opaque control system together with the config it came from.
 */
typedef struct ChaincsSystem ChaincsSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *chaincs_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library, freed once.
 */
void chaincs_string_free(char *s);

/**
 * Bundled algebra by name (`heisenberg3`, `filiform4`, `abelian:N`, ...).
 *
 * # Safety
 * `name` must be a nul-terminated string; `out` must be writable.
 */
enum ChaincsStatus chaincs_algebra_preset(const char *name, struct ChaincsAlgebra **out);

/**
 * Algebra from dense structure constants, `c[(i*dim + j)*dim + k]` being the
 * coefficient of `e_k` in `[e_i, e_j]`.
 *
 * # Safety
 * `c` must hold `dim^3` values; `out` must be writable.
 */
enum ChaincsStatus chaincs_algebra_new(size_t dim, const double *c, struct ChaincsAlgebra **out);

/**
 * # Safety
 * `a` must be null or a live handle, freed once.
 */
void chaincs_algebra_free(struct ChaincsAlgebra *a);

/**
 * Dimension, or 0 for a null handle.
 *
 * # Safety
 * `a` must be null or a live handle.
 */
size_t chaincs_algebra_dim(const struct ChaincsAlgebra *a);

/**
 * Nilpotency class, or 0 for a null handle.
 *
 * # Safety
 * `a` must be null or a live handle.
 */
size_t chaincs_algebra_class(const struct ChaincsAlgebra *a);

/**
 * Group product `x * y` in exponential coordinates; all arrays have length
 * `n`, which must equal the dimension.
 *
 * # Safety
 * `x`, `y` and `out` must point to `n` values.
 */
enum ChaincsStatus chaincs_algebra_product(const struct ChaincsAlgebra *a,
                                           const double *x,
                                           const double *y,
                                           double *out,
                                           size_t n);

/**
 * System from config text (TOML).
 *
 * # Safety
 * `config` must be a nul-terminated string; `out` must be writable.
 */
enum ChaincsStatus chaincs_system_new(const char *config, struct ChaincsSystem **out);

/**
 * System from a bundled preset name.
 *
 * # Safety
 * `name` must be a nul-terminated string; `out` must be writable.
 */
enum ChaincsStatus chaincs_system_preset(const char *name, struct ChaincsSystem **out);

/**
 * # Safety
 * `s` must be null or a live handle, freed once.
 */
void chaincs_system_free(struct ChaincsSystem *s);

/**
 * Dimension of the nilpotent part, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t chaincs_system_dim(const struct ChaincsSystem *s);

/**
 * Torus dimension, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t chaincs_system_torus_dim(const struct ChaincsSystem *s);

/**
 * Control dimension, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t chaincs_system_control_dim(const struct ChaincsSystem *s);

/**
 * Solution at time `t >= 0` from `(h0, x0)` under the constant control `u`.
 * `h0`/`h_out` have the torus dimension, `x0`/`x_out` the nilpotent one and
 * `u` the control dimension.
 *
 * # Safety
 * Every array must hold the number of values given by the matching
 * dimension query.
 */
enum ChaincsStatus chaincs_system_solve(const struct ChaincsSystem *s,
                                        double t,
                                        const double *h0,
                                        const double *x0,
                                        const double *u,
                                        double *h_out,
                                        double *x_out);

/**
 * Runs `command` (`decompose`, `simulate`, `chainset` or `conjugate`) on the
 * system's config. On `Ok` or `TheoremFailed`, `*json_out` receives the
 * report body, to be released with [`chaincs_string_free`]. When `out_dir`
 * is non-null the usual output files are written there too.
 *
 * # Safety
 * `command` must be a nul-terminated string, `out_dir` null or one, and
 * `json_out` writable.
 */
enum ChaincsStatus chaincs_run_json(const struct ChaincsSystem *s,
                                    const char *command,
                                    const char *out_dir,
                                    char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHAINCS_H */
