//! C ABI for the marco solver library.
//!
//! Conventions:
//! * Every function returns a [`MarcoStatus`]; out-parameters are
//!   written only on `MARCO_STATUS_OK`.
//! * Instances and policies are opaque handles, created and destroyed
//!   by this library. Passing a handle after freeing it is undefined
//!   behaviour, as with any C object.
//! * On failure, a thread-local message describing the error is kept;
//!   [`marco_last_error_message`] returns it. The pointer stays valid
//!   until the next failing call on the same thread.
//! * Strings returned through out-parameters are heap-allocated and
//!   must be released with [`marco_string_free`].
//! * Panics never unwind across the boundary; they surface as
//!   `MARCO_STATUS_RUNTIME`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use marco::error::Error;
use marco::instances::{gen_erdos_renyi, gen_tsp_uniform, GraphInstance};
use marco::policy::Policy;
use marco::problems::ProblemKind;
use marco::search::{marco_construct, marco_improve, SearchConfig};

/// Result of every call across the C boundary.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MarcoStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input was rejected (bad value, parse failure, wrong problem).
    InvalidInput = 3,
    /// The filesystem failed.
    Io = 4,
    /// The solver failed at runtime (including caught panics).
    Runtime = 5,
}

/// Opaque graph instance handle.
pub struct MarcoInstance(GraphInstance);

/// Opaque trained-policy handle.
pub struct MarcoPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: MarcoStatus, msg: impl Into<String>) -> MarcoStatus {
    let msg = msg.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(msg).unwrap_or_else(|_| {
            CString::new("error message contained an interior NUL").expect("literal")
        }));
    });
    status
}

fn fail_error(e: Error) -> MarcoStatus {
    let status = match &e {
        Error::Io(_) => MarcoStatus::Io,
        Error::AllMasked | Error::NonFinite(_) => MarcoStatus::Runtime,
        _ => MarcoStatus::InvalidInput,
    };
    fail(status, e.to_string())
}

/// Run `body`, converting panics into `MARCO_STATUS_RUNTIME`.
fn guarded(body: impl FnOnce() -> MarcoStatus) -> MarcoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(MarcoStatus::Runtime, format!("internal panic: {msg}"))
        }
    }
}

/// Read a required C string argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, MarcoStatus> {
    if ptr.is_null() {
        return Err(fail(MarcoStatus::NullArgument, format!("{what} must not be null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(MarcoStatus::InvalidUtf8, format!("{what} must be valid UTF-8")))
}

fn required_out<T>(ptr: *mut T, what: &str) -> Result<(), MarcoStatus> {
    if ptr.is_null() {
        Err(fail(MarcoStatus::NullArgument, format!("{what} must not be null")))
    } else {
        Ok(())
    }
}

/// Last error message for this thread, or null if no call has failed
/// yet. Valid until the next failing call on the same thread; do not
/// free it.
#[no_mangle]
pub extern "C" fn marco_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Generate a random instance.
///
/// `problem` is `"mc"`, `"mis"` (Erdős–Rényi with edge probability
/// `p`) or `"tsp"` (uniform points in the unit square; `p` is
/// ignored). The result is deterministic in the arguments.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_generate(
    problem: *const c_char,
    n: usize,
    p: f64,
    seed: u64,
    out: *mut *mut MarcoInstance,
) -> MarcoStatus {
    guarded(|| {
        if let Err(s) = required_out(out, "out") {
            return s;
        }
        let problem = match unsafe { required_str(problem, "problem") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let kind: ProblemKind = match problem.parse() {
            Ok(k) => k,
            Err(e) => return fail_error(e),
        };
        if n < 2 {
            return fail(MarcoStatus::InvalidInput, "n must be at least 2");
        }
        let g = match kind {
            ProblemKind::Tsp => gen_tsp_uniform(n, seed),
            _ => {
                if !(0.0..=1.0).contains(&p) {
                    return fail(MarcoStatus::InvalidInput, "p must lie in [0, 1]");
                }
                gen_erdos_renyi(n, p, seed)
            }
        };
        unsafe { *out = Box::into_raw(Box::new(MarcoInstance(g))) };
        MarcoStatus::Ok
    })
}

/// Load an instance from a native-format or DIMACS file.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_load(
    path: *const c_char,
    out: *mut *mut MarcoInstance,
) -> MarcoStatus {
    guarded(|| {
        if let Err(s) = required_out(out, "out") {
            return s;
        }
        let path = match unsafe { required_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match GraphInstance::load(Path::new(path)) {
            Ok(g) => {
                unsafe { *out = Box::into_raw(Box::new(MarcoInstance(g))) };
                MarcoStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Write an instance in the native format.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_save(
    instance: *const MarcoInstance,
    path: *const c_char,
) -> MarcoStatus {
    guarded(|| {
        if instance.is_null() {
            return fail(MarcoStatus::NullArgument, "instance must not be null");
        }
        let path = match unsafe { required_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match unsafe { &(*instance).0 }.save(Path::new(path)) {
            Ok(()) => MarcoStatus::Ok,
            Err(e) => fail_error(e),
        }
    })
}

/// Number of nodes, or 0 if `instance` is null.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_n(instance: *const MarcoInstance) -> usize {
    if instance.is_null() {
        return 0;
    }
    unsafe { &(*instance).0 }.n
}

/// Number of edges, or 0 if `instance` is null.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_edge_count(instance: *const MarcoInstance) -> usize {
    if instance.is_null() {
        return 0;
    }
    unsafe { &(*instance).0 }.edges.len()
}

/// Release an instance handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn marco_instance_free(instance: *mut MarcoInstance) {
    if !instance.is_null() {
        drop(unsafe { Box::from_raw(instance) });
    }
}

/// Load a trained policy checkpoint.
#[no_mangle]
pub unsafe extern "C" fn marco_policy_load(
    path: *const c_char,
    out: *mut *mut MarcoPolicy,
) -> MarcoStatus {
    guarded(|| {
        if let Err(s) = required_out(out, "out") {
            return s;
        }
        let path = match unsafe { required_str(path, "path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match Policy::load(Path::new(path)) {
            Ok((policy, _state)) => {
                unsafe { *out = Box::into_raw(Box::new(MarcoPolicy(policy))) };
                MarcoStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// The problem a policy was trained for: `"mc"`, `"mis"` or `"tsp"`.
/// The string is static; do not free it. Null input yields null.
#[no_mangle]
pub unsafe extern "C" fn marco_policy_problem(policy: *const MarcoPolicy) -> *const c_char {
    if policy.is_null() {
        return std::ptr::null();
    }
    match unsafe { &(*policy).0 }.problem {
        ProblemKind::MaxCut => c"mc".as_ptr(),
        ProblemKind::Mis => c"mis".as_ptr(),
        ProblemKind::Tsp => c"tsp".as_ptr(),
    }
}

/// Release a policy handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn marco_policy_free(policy: *mut MarcoPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Solve `instance` with `policy` (improvement search for mc/mis,
/// constructive search for tsp) and return the full result as a JSON
/// document in `out_json`.
///
/// `memory_mode` is `"none"`, `"op-based"`, `"independent"` or
/// `"shared"`; null keeps the default (shared). `threads`, `k` and
/// `max_steps` override the problem-sized defaults when nonzero.
/// Results are deterministic in `(instance, policy, seed, settings)`.
#[no_mangle]
pub unsafe extern "C" fn marco_solve_json(
    policy: *const MarcoPolicy,
    instance: *const MarcoInstance,
    memory_mode: *const c_char,
    threads: usize,
    k: usize,
    max_steps: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> MarcoStatus {
    guarded(|| {
        if let Err(s) = required_out(out_json, "out_json") {
            return s;
        }
        if policy.is_null() {
            return fail(MarcoStatus::NullArgument, "policy must not be null");
        }
        if instance.is_null() {
            return fail(MarcoStatus::NullArgument, "instance must not be null");
        }
        let policy = unsafe { &(*policy).0 };
        let g = unsafe { &(*instance).0 };

        let mut cfg = if policy.problem == ProblemKind::Tsp {
            SearchConfig::construct_defaults()
        } else {
            SearchConfig::improve_defaults(g.n)
        };
        if !memory_mode.is_null() {
            let mode = match unsafe { required_str(memory_mode, "memory_mode") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            cfg.memory_mode = match mode.parse() {
                Ok(m) => m,
                Err(e) => return fail_error(e),
            };
        }
        if threads > 0 {
            cfg.threads = threads;
        }
        if k > 0 {
            cfg.k = k;
        }
        if max_steps > 0 {
            cfg.max_steps = max_steps;
        }
        cfg.seed = seed;

        let result = if policy.problem == ProblemKind::Tsp {
            marco_construct(g, policy, &cfg)
        } else {
            marco_improve(g, policy, &cfg)
        };
        match result {
            Ok(r) => {
                let json = r.to_json();
                let c = CString::new(json)
                    .expect("serde_json output never contains interior NUL");
                unsafe { *out_json = c.into_raw() };
                MarcoStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Release a string returned by this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn marco_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
