//! C ABI over the synthetic-environment generator, the exact counterfactual
//! oracles, and the benchmark runner.
//!
//! Conventions, enforced by every entry point:
//!
//! * Functions return a [`CsiStatus`] code; results travel through out
//!   parameters. [`csi_last_error_message`] holds a human-readable message
//!   for the most recent failure on the calling thread.
//! * Environments are opaque [`CsiEnv`] handles owned by the library.
//!   Release them with [`csi_env_free`]; strings returned by the library go
//!   back through [`csi_string_free`].
//! * No panic crosses the boundary: unexpected panics are caught and
//!   surfaced as [`CsiStatus::InternalPanic`].
//!
//! The build script runs cbindgen over this file and writes the matching
//! header to `include/csi.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use csi_core::bench::{self, ExperimentConfig};
use csi_core::env::{
    generate_environment, Action, Context, EnvConfig, Environment, NUM_ACTIONS, NUM_CONTEXTS,
};
use csi_core::learners::exact_csi_posterior;
use csi_core::Error;

/// Result code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// An argument violated a documented precondition.
    InvalidArgument = 3,
    /// A configuration value was outside its documented range.
    InvalidConfig = 4,
    /// The generated environment had no best-worst value gap to normalize by.
    Degenerate = 5,
    /// The data contained no positive-reward samples to transform.
    NoPositives = 6,
    /// A context or action index was outside the environment's space.
    OutOfRange = 7,
    /// The benchmark run failed; see the last error message for details.
    RunFailed = 8,
    /// An internal panic was caught at the boundary.
    InternalPanic = 9,
}

/// Spreads (and one shift) of the normal draws that define an environment.
/// Mirrors the library's native configuration field for field.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiEnvConfig {
    /// Spread of the 128 context logits.
    pub context_logit_sd: f64,
    /// Spread of the 7 context coefficients in the oracle.
    pub context_coef_sd: f64,
    /// Spread of the 5 action coefficients.
    pub action_coef_sd: f64,
    /// Spread of the 45 interaction coefficients.
    pub interaction_coef_sd: f64,
    /// Spread of the 21 context-pair coefficients.
    pub context_pair_coef_sd: f64,
    /// Spread of the oracle bias.
    pub bias_sd: f64,
    /// Additive shift of the oracle bias; negative values push reward rates
    /// toward click-like base rates.
    pub bias_shift: f64,
}

impl From<EnvConfig> for CsiEnvConfig {
    fn from(c: EnvConfig) -> Self {
        Self {
            context_logit_sd: c.context_logit_sd,
            context_coef_sd: c.context_coef_sd,
            action_coef_sd: c.action_coef_sd,
            interaction_coef_sd: c.interaction_coef_sd,
            context_pair_coef_sd: c.context_pair_coef_sd,
            bias_sd: c.bias_sd,
            bias_shift: c.bias_shift,
        }
    }
}

impl From<CsiEnvConfig> for EnvConfig {
    fn from(c: CsiEnvConfig) -> Self {
        Self {
            context_logit_sd: c.context_logit_sd,
            context_coef_sd: c.context_coef_sd,
            action_coef_sd: c.action_coef_sd,
            interaction_coef_sd: c.interaction_coef_sd,
            context_pair_coef_sd: c.context_pair_coef_sd,
            bias_sd: c.bias_sd,
            bias_shift: c.bias_shift,
        }
    }
}

/// Opaque handle to a generated environment. Create with
/// [`csi_env_generate`], release with [`csi_env_free`]. Handles are
/// immutable after creation, so sharing one across threads for reads is
/// safe; creation and destruction must not race with other uses.
pub struct CsiEnv {
    inner: Environment,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    // A NUL inside the message would truncate it; none of our messages
    // contain one, but user-supplied text can end up in them.
    let sanitized = msg.replace('\0', " ");
    let stored = CString::new(sanitized).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn null_pointer(name: &str) -> CsiStatus {
    set_last_error(&format!("null pointer argument: {name}"));
    CsiStatus::NullPointer
}

fn status_for(err: &Error) -> CsiStatus {
    match err {
        Error::WithSeed { source, .. } => status_for(source),
        Error::InvalidConfig(_) => CsiStatus::InvalidConfig,
        Error::InvalidArgument(_) | Error::EmptyInput(_) | Error::Parse { .. } => {
            CsiStatus::InvalidArgument
        }
        Error::DegenerateEnvironment { .. } => CsiStatus::Degenerate,
        Error::NoPositives => CsiStatus::NoPositives,
        _ => CsiStatus::RunFailed,
    }
}

fn fail(err: &Error) -> CsiStatus {
    set_last_error(&err.to_string());
    status_for(err)
}

/// Runs `f`, converting any panic into [`CsiStatus::InternalPanic`] so the
/// unwind never reaches C frames.
fn guarded(f: impl FnOnce() -> CsiStatus) -> CsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic caught at the C boundary");
            CsiStatus::InternalPanic
        }
    }
}

/// Returns the message for the most recent failure on the calling thread,
/// or null if no call has failed yet. The pointer stays valid until the
/// next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn csi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Returns the default environment configuration.
#[no_mangle]
pub extern "C" fn csi_env_config_default() -> CsiEnvConfig {
    EnvConfig::default().into()
}

/// Generates the environment determined by `seed` and `config` and stores a
/// heap-owned handle in `*out`.
///
/// `config` may be null to use the defaults from
/// [`csi_env_config_default`].
///
/// # Safety
///
/// `out` must point to writable memory for one pointer; `config`, when non
/// null, must point to a valid [`CsiEnvConfig`].
#[no_mangle]
pub unsafe extern "C" fn csi_env_generate(
    seed: u64,
    config: *const CsiEnvConfig,
    out: *mut *mut CsiEnv,
) -> CsiStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        let cfg: EnvConfig = if config.is_null() {
            EnvConfig::default()
        } else {
            (unsafe { *config }).into()
        };
        match generate_environment(seed, &cfg) {
            Ok(env) => {
                unsafe { *out = Box::into_raw(Box::new(CsiEnv { inner: env })) };
                CsiStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases an environment handle. Null is a no-op.
///
/// # Safety
///
/// `env` must have come from [`csi_env_generate`] and must not be used
/// again after this call.
#[no_mangle]
pub unsafe extern "C" fn csi_env_free(env: *mut CsiEnv) {
    if env.is_null() {
        return;
    }
    let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { Box::from_raw(env) })));
}

fn check_indices(context: u32, action: u32) -> Result<(), CsiStatus> {
    if (context as usize) < NUM_CONTEXTS && (action as usize) < NUM_ACTIONS {
        return Ok(());
    }
    set_last_error(&format!(
        "index out of range: context {context} (limit {NUM_CONTEXTS}), action {action} (limit {NUM_ACTIONS})"
    ));
    Err(CsiStatus::OutOfRange)
}

/// Writes the true reward probability of `(context, action)` to `*out`.
/// Contexts index the 128 contexts, actions the 32 actions, both row-major
/// over their bit patterns.
///
/// # Safety
///
/// `env` must be a live handle from [`csi_env_generate`]; `out` must point
/// to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn csi_env_reward_prob(
    env: *const CsiEnv,
    context: u32,
    action: u32,
    out: *mut f64,
) -> CsiStatus {
    guarded(|| {
        let Some(env) = (unsafe { env.as_ref() }) else {
            return null_pointer("env");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        if let Err(status) = check_indices(context, action) {
            return status;
        }
        let p = env.inner.true_reward_prob(
            Context::from_index(context as usize),
            Action::from_index(action as usize),
        );
        unsafe { *out = p };
        CsiStatus::Ok
    })
}

/// Writes the marginal probability of drawing `context` to `*out`.
///
/// # Safety
///
/// `env` must be a live handle from [`csi_env_generate`]; `out` must point
/// to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn csi_env_context_prob(
    env: *const CsiEnv,
    context: u32,
    out: *mut f64,
) -> CsiStatus {
    guarded(|| {
        let Some(env) = (unsafe { env.as_ref() }) else {
            return null_pointer("env");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        if let Err(status) = check_indices(context, 0) {
            return status;
        }
        unsafe { *out = env.inner.context_probs()[context as usize] };
        CsiStatus::Ok
    })
}

/// Writes the expected reward of the best deterministic policy to `*out`.
///
/// # Safety
///
/// `env` must be a live handle from [`csi_env_generate`]; `out` must point
/// to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn csi_env_best_value(env: *const CsiEnv, out: *mut f64) -> CsiStatus {
    guarded(|| {
        let Some(env) = (unsafe { env.as_ref() }) else {
            return null_pointer("env");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        unsafe { *out = env.inner.best_policy_value() };
        CsiStatus::Ok
    })
}

/// Writes the expected reward of the worst deterministic policy to `*out`.
///
/// # Safety
///
/// `env` must be a live handle from [`csi_env_generate`]; `out` must point
/// to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn csi_env_worst_value(env: *const CsiEnv, out: *mut f64) -> CsiStatus {
    guarded(|| {
        let Some(env) = (unsafe { env.as_ref() }) else {
            return null_pointer("env");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        unsafe { *out = env.inner.worst_policy_value() };
        CsiStatus::Ok
    })
}

/// Fills `out` with the exact posterior probability that a transformed
/// sample carries a logged rather than a counterfactual action, under
/// uniform logging, for every (context, action) pair. The layout is
/// row-major: `out[context * 32 + action]`. `len` must be exactly
/// 128 * 32 = 4096.
///
/// # Safety
///
/// `env` must be a live handle from [`csi_env_generate`]; `out` must point
/// to writable memory for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_env_uniform_posterior(
    env: *const CsiEnv,
    out: *mut f64,
    len: usize,
) -> CsiStatus {
    guarded(|| {
        let Some(env) = (unsafe { env.as_ref() }) else {
            return null_pointer("env");
        };
        if out.is_null() {
            return null_pointer("out");
        }
        let expected = NUM_CONTEXTS * NUM_ACTIONS;
        if len != expected {
            set_last_error(&format!(
                "posterior buffer holds {len} doubles, the table needs exactly {expected}"
            ));
            return CsiStatus::InvalidArgument;
        }
        let reward: Vec<Vec<f64>> = Context::all()
            .map(|x| {
                Action::all()
                    .map(|a| env.inner.true_reward_prob(x, a))
                    .collect()
            })
            .collect();
        let uniform = vec![vec![1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]; NUM_CONTEXTS];
        let table = match exact_csi_posterior(&reward, &uniform) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let buffer = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (row, chunk) in table.iter().zip(buffer.chunks_exact_mut(NUM_ACTIONS)) {
            chunk.copy_from_slice(row);
        }
        CsiStatus::Ok
    })
}

/// Runs the benchmark described by the JSON configuration and stores the
/// rendered report in `*out` as a NUL-terminated string. The JSON schema
/// matches the CLI config file; omitted fields take the same defaults. The
/// `output` path field is ignored here: the report always comes back
/// through `*out`, in the configured `format`. Free the string with
/// [`csi_string_free`].
///
/// # Safety
///
/// `config_json` must be a NUL-terminated string; `out` must point to
/// writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn csi_bench_run_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> CsiStatus {
    guarded(|| {
        if config_json.is_null() {
            return null_pointer("config_json");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let text = match unsafe { CStr::from_ptr(config_json) }.to_str() {
            Ok(t) => t,
            Err(e) => {
                set_last_error(&format!("configuration is not valid UTF-8: {e}"));
                return CsiStatus::Utf8;
            }
        };
        let cfg: ExperimentConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_last_error(&format!("configuration does not parse: {e}"));
                return CsiStatus::InvalidArgument;
            }
        };
        let result = match bench::run(&cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let report = result.render(cfg.format);
        match CString::new(report) {
            Ok(c) => {
                unsafe { *out = c.into_raw() };
                CsiStatus::Ok
            }
            Err(_) => {
                set_last_error("rendered report contained an interior NUL byte");
                CsiStatus::RunFailed
            }
        }
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
///
/// `s` must have come from a `csi_` function that documents this release
/// path, and must not be used again after this call.
#[no_mangle]
pub unsafe extern "C" fn csi_string_free(s: *mut c_char) {
    if s.is_null() {
        return;
    }
    let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { CString::from_raw(s) })));
}
