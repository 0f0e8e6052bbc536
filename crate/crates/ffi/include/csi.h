#ifndef CSI_H
#define CSI_H

/* Generated by cbindgen from the csi-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code returned by every fallible entry point.
 */
typedef enum CsiStatus {
  /*
   The call succeeded.
   */
  CSI_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  CSI_STATUS_NULL_POINTER = 1,
  /*
   A string argument was not valid UTF-8.
   */
  CSI_STATUS_UTF8 = 2,
  /*
   An argument violated a documented precondition.
   */
  CSI_STATUS_INVALID_ARGUMENT = 3,
  /*
   A configuration value was outside its documented range.
   */
  CSI_STATUS_INVALID_CONFIG = 4,
  /*
   The generated environment had no best-worst value gap to normalize by.
   */
  CSI_STATUS_DEGENERATE = 5,
  /*
   The data contained no positive-reward samples to transform.
   */
  CSI_STATUS_NO_POSITIVES = 6,
  /*
   A context or action index was outside the environment's space.
   */
  CSI_STATUS_OUT_OF_RANGE = 7,
  /*
   The benchmark run failed; see the last error message for details.
   */
  CSI_STATUS_RUN_FAILED = 8,
  /*
   An internal panic was caught at the boundary.
   */
  CSI_STATUS_INTERNAL_PANIC = 9,
} CsiStatus;

/*
 Opaque handle to a generated environment. Create with
 [`csi_env_generate`], release with [`csi_env_free`]. Handles are
 immutable after creation, so sharing one across threads for reads is
 safe; creation and destruction must not race with other uses.
 */
typedef struct CsiEnv CsiEnv;

/*
 Spreads (and one shift) of the normal draws that define an environment.
 Mirrors the library's native configuration field for field.
 */
typedef struct CsiEnvConfig {
  /*
   Spread of the 128 context logits.
   */
  double context_logit_sd;
  /*
   Spread of the 7 context coefficients in the oracle.
   */
  double context_coef_sd;
  /*
   Spread of the 5 action coefficients.
   */
  double action_coef_sd;
  /*
   Spread of the 45 interaction coefficients.
   */
  double interaction_coef_sd;
  /*
   Spread of the 21 context-pair coefficients.
   */
  double context_pair_coef_sd;
  /*
   Spread of the oracle bias.
   */
  double bias_sd;
  /*
   Additive shift of the oracle bias; negative values push reward rates
   toward click-like base rates.
   */
  double bias_shift;
} CsiEnvConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Returns the message for the most recent failure on the calling thread,
 or null if no call has failed yet. The pointer stays valid until the
 next failing call on the same thread; do not free it.
 */
const char *csi_last_error_message(void);

/*
 Returns the default environment configuration.
 */
struct CsiEnvConfig csi_env_config_default(void);

/*
 Generates the environment determined by `seed` and `config` and stores a
 heap-owned handle in `*out`.

 `config` may be null to use the defaults from
 [`csi_env_config_default`].

 # Safety

 `out` must point to writable memory for one pointer; `config`, when non
 null, must point to a valid [`CsiEnvConfig`].
 */
enum CsiStatus csi_env_generate(uint64_t seed,
                                const struct CsiEnvConfig *config,
                                struct CsiEnv **out);

/*
 Releases an environment handle. Null is a no-op.

 # Safety

 `env` must have come from [`csi_env_generate`] and must not be used
 again after this call.
 */
void csi_env_free(struct CsiEnv *env);

/*
 Writes the true reward probability of `(context, action)` to `*out`.
 Contexts index the 128 contexts, actions the 32 actions, both row-major
 over their bit patterns.

 # Safety

 `env` must be a live handle from [`csi_env_generate`]; `out` must point
 to writable memory for one double.
 */
enum CsiStatus csi_env_reward_prob(const struct CsiEnv *env,
                                   uint32_t context,
                                   uint32_t action,
                                   double *out);

/*
 Writes the marginal probability of drawing `context` to `*out`.

 # Safety

 `env` must be a live handle from [`csi_env_generate`]; `out` must point
 to writable memory for one double.
 */
enum CsiStatus csi_env_context_prob(const struct CsiEnv *env, uint32_t context, double *out);

/*
 Writes the expected reward of the best deterministic policy to `*out`.

 # Safety

 `env` must be a live handle from [`csi_env_generate`]; `out` must point
 to writable memory for one double.
 */
enum CsiStatus csi_env_best_value(const struct CsiEnv *env, double *out);

/*
 Writes the expected reward of the worst deterministic policy to `*out`.

 # Safety

 `env` must be a live handle from [`csi_env_generate`]; `out` must point
 to writable memory for one double.
 */
enum CsiStatus csi_env_worst_value(const struct CsiEnv *env, double *out);

/*
 Fills `out` with the exact posterior probability that a transformed
 sample carries a logged rather than a counterfactual action, under
 uniform logging, for every (context, action) pair. The layout is
 row-major: `out[context * 32 + action]`. `len` must be exactly
 128 * 32 = 4096.

 # Safety

 `env` must be a live handle from [`csi_env_generate`]; `out` must point
 to writable memory for `len` doubles.
 */
enum CsiStatus csi_env_uniform_posterior(const struct CsiEnv *env, double *out, size_t len);

/*
 Runs the benchmark described by the JSON configuration and stores the
 rendered report in `*out` as a NUL-terminated string. The JSON schema
 matches the CLI config file; omitted fields take the same defaults. The
 `output` path field is ignored here: the report always comes back
 through `*out`, in the configured `format`. Free the string with
 [`csi_string_free`].

 # Safety

 `config_json` must be a NUL-terminated string; `out` must point to
 writable memory for one pointer.
 */
enum CsiStatus csi_bench_run_json(const char *config_json, char **out);

/*
 Releases a string returned by this library. Null is a no-op.

 # Safety

 `s` must have come from a `csi_` function that documents this release
 path, and must not be used again after this call.
 */
void csi_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSI_H */
