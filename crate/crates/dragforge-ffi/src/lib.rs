//! C ABI for the dragforge pulse-shaping library.
//!
//! Conventions:
//! - Every object crosses the boundary as an opaque pointer created by a
//!   `dragforge_*_new`-style constructor and released by the matching
//!   `dragforge_*_free`. Freeing a null pointer is a no-op.
//! - Fallible calls return a `dragforge_status` code (0 on success) and
//!   write results through out-pointers, which are left untouched on error.
//! - The message for the most recent error on the calling thread is
//!   available via [`dragforge_last_error`].
//! - All pointers must be valid for the duration of the call; strings are
//!   NUL-terminated UTF-8.
//!
//! The companion header is `include/dragforge.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use dragforge::envelope::{gaussian_envelope, normalize_area, Envelope, GaussianSpec};
use dragforge::experiments::{run, Ini};
use dragforge::models::LevelSystem;
use dragforge::propagator::{evolve, IntegratorConfig, Method, UnitaryMatrix};
use dragforge::shaping::{
    bare_pulse, doublet_exact, ladder_correction, rwa_correction, semiclassical_multiplet,
    build_semiclassical_pulse, DetuningSet, LadderOrder, ShapedPulse,
};
use dragforge::spectrum::spectral_excitation;
use dragforge::DragError;

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum dragforge_status {
    DRAGFORGE_OK = 0,
    /// A required pointer argument was null.
    DRAGFORGE_NULL_POINTER = 1,
    /// An argument failed validation (bad spec, bad UTF-8, bad enum value).
    DRAGFORGE_INVALID_ARGUMENT = 2,
    /// The requested construction is outside its validity regime.
    DRAGFORGE_INVALID_REGIME = 3,
    /// Numerical failure (integration non-convergence, singular system).
    DRAGFORGE_NUMERICAL_FAILURE = 4,
    /// A panic was caught at the boundary; state may be stale.
    DRAGFORGE_INTERNAL_PANIC = 5,
}

use dragforge_status::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap_or_default());
}

fn code_for(err: &DragError) -> dragforge_status {
    match err {
        DragError::InvalidSpec(_)
        | DragError::UnsupportedOrder { .. }
        | DragError::InsufficientFlatness { .. }
        | DragError::SizeError(_)
        | DragError::DimensionMismatch(_)
        | DragError::GridMismatch(_)
        | DragError::ConfigError(_) => DRAGFORGE_INVALID_ARGUMENT,
        DragError::DegenerateGap { .. } | DragError::InvalidRegime { .. } => {
            DRAGFORGE_INVALID_REGIME
        }
        DragError::NormalizationFailure(_)
        | DragError::SingularSystem(_)
        | DragError::IntegratorFailure(_)
        | DragError::Divergence { .. } => DRAGFORGE_NUMERICAL_FAILURE,
    }
}

fn fail(err: DragError) -> dragforge_status {
    let code = code_for(&err);
    set_error(&err.to_string());
    code
}

/// Run `f` with panics converted to a status code, never unwinding into C.
fn guarded(f: impl FnOnce() -> dragforge_status) -> dragforge_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            DRAGFORGE_INTERNAL_PANIC
        }
    }
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                set_error(concat!("null pointer: ", stringify!($ptr)));
                return DRAGFORGE_NULL_POINTER;
            }
        }
    };
}

/// Message for the most recent error on this thread (empty string if none).
/// The pointer is valid until the next failing dragforge call on the same
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn dragforge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// envelopes
// ---------------------------------------------------------------------------

/// Truncated Gaussian envelope of the given flatness (number of vanishing
/// endpoint derivatives), area-normalized so the pulse rotation is `theta`.
#[no_mangle]
pub extern "C" fn dragforge_envelope_gaussian(
    sigma: f64,
    duration: f64,
    flatness: u32,
    theta: f64,
    out: *mut *mut Envelope,
) -> dragforge_status {
    guarded(|| {
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        let built = gaussian_envelope(GaussianSpec {
            amplitude: 1.0,
            sigma,
            duration,
            flatness,
        })
        .and_then(|unit| normalize_area(&unit, 0.5 * theta, |_| 1.0));
        match built {
            Ok(env) => {
                unsafe { *out = Box::into_raw(Box::new(env)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn dragforge_envelope_free(env: *mut Envelope) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Envelope value at `t` (zero outside `[0, duration]`).
#[no_mangle]
pub extern "C" fn dragforge_envelope_value(
    env: *const Envelope,
    t: f64,
    out: *mut f64,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        unsafe { *out = env.value(t) };
        DRAGFORGE_OK
    })
}

// ---------------------------------------------------------------------------
// pulses
// ---------------------------------------------------------------------------

/// The plain envelope as a pulse (no correction).
#[no_mangle]
pub extern "C" fn dragforge_pulse_bare(
    env: *const Envelope,
    out: *mut *mut ShapedPulse,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        unsafe { *out = Box::into_raw(Box::new(bare_pulse(env))) };
        DRAGFORGE_OK
    })
}

/// First-order multiplet pulse: one spectral hole per entry of
/// `offsets[0..n]`, using derivative orders 1..n.
#[no_mangle]
pub extern "C" fn dragforge_pulse_multiplet(
    env: *const Envelope,
    offsets: *const f64,
    n_offsets: usize,
    out: *mut *mut ShapedPulse,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if offsets.is_null() || out.is_null() {
            set_error("null pointer: offsets/out");
            return DRAGFORGE_NULL_POINTER;
        }
        let offsets = unsafe { slice::from_raw_parts(offsets, n_offsets) };
        let orders: Vec<u32> = (1..=n_offsets as u32).collect();
        let built = DetuningSet::new(offsets.to_vec(), vec![1.0; n_offsets])
            .and_then(|targets| semiclassical_multiplet(&targets, &orders))
            .and_then(|coeffs| build_semiclassical_pulse(env, &coeffs));
        match built {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(p)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Exact doublet pulse for one spectator at `delta` with coupling `lambda2`.
#[no_mangle]
pub extern "C" fn dragforge_pulse_doublet_exact(
    env: *const Envelope,
    delta: f64,
    lambda2: f64,
    out: *mut *mut ShapedPulse,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        match doublet_exact(env, delta, lambda2) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(p)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Anharmonic-ladder correction of the given order (1, 2, or 3).
#[no_mangle]
pub extern "C" fn dragforge_pulse_ladder(
    env: *const Envelope,
    delta: f64,
    lambda: f64,
    order: u32,
    out: *mut *mut ShapedPulse,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        let order = match order {
            1 => LadderOrder::H1,
            2 => LadderOrder::H2,
            3 => LadderOrder::H3,
            other => {
                set_error(&format!("ladder order must be 1..3, got {other}"));
                return DRAGFORGE_INVALID_ARGUMENT;
            }
        };
        match ladder_correction(env, delta, lambda, order) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(p)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Beyond-rotating-wave correction for a carrier at `omega_d`.
#[no_mangle]
pub extern "C" fn dragforge_pulse_rwa(
    env: *const Envelope,
    omega_d: f64,
    out: *mut *mut ShapedPulse,
) -> dragforge_status {
    guarded(|| {
        let env = nonnull!(env);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        match rwa_correction(env, omega_d) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(p)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn dragforge_pulse_free(pulse: *mut ShapedPulse) {
    if !pulse.is_null() {
        drop(unsafe { Box::from_raw(pulse) });
    }
}

/// Control samples at time `t`: in-phase amplitude, quadrature amplitude,
/// and drive detuning. Out-pointers may be null to skip a component.
#[no_mangle]
pub extern "C" fn dragforge_pulse_sample(
    pulse: *const ShapedPulse,
    t: f64,
    re_omega: *mut f64,
    im_omega: *mut f64,
    detuning: *mut f64,
) -> dragforge_status {
    guarded(|| {
        let pulse = nonnull!(pulse);
        if !re_omega.is_null() {
            unsafe { *re_omega = pulse.re_omega(t) };
        }
        if !im_omega.is_null() {
            unsafe { *im_omega = pulse.im_omega(t) };
        }
        if !detuning.is_null() {
            unsafe { *detuning = pulse.detuning(t) };
        }
        DRAGFORGE_OK
    })
}

#[no_mangle]
pub extern "C" fn dragforge_pulse_duration(pulse: *const ShapedPulse) -> f64 {
    unsafe { pulse.as_ref() }.map_or(f64::NAN, ShapedPulse::duration)
}

#[no_mangle]
pub extern "C" fn dragforge_pulse_theta(pulse: *const ShapedPulse) -> f64 {
    unsafe { pulse.as_ref() }.map_or(f64::NAN, ShapedPulse::theta)
}

/// |windowed Fourier transform| of the pulse at offset `delta`.
#[no_mangle]
pub extern "C" fn dragforge_pulse_spectral_magnitude(
    pulse: *const ShapedPulse,
    delta: f64,
    out: *mut f64,
) -> dragforge_status {
    guarded(|| {
        let pulse = nonnull!(pulse);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        unsafe { *out = spectral_excitation(pulse, delta).norm() };
        DRAGFORGE_OK
    })
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

/// Disjoint-qubit model: entry 0 is the driven transition (offset 0,
/// coupling 1 enforced by the library); the rest are spectators.
#[no_mangle]
pub extern "C" fn dragforge_model_disjoint(
    offsets: *const f64,
    couplings: *const f64,
    n: usize,
    out: *mut *mut LevelSystem,
) -> dragforge_status {
    guarded(|| {
        if offsets.is_null() || couplings.is_null() || out.is_null() {
            set_error("null pointer: offsets/couplings/out");
            return DRAGFORGE_NULL_POINTER;
        }
        let offsets = unsafe { slice::from_raw_parts(offsets, n) };
        let couplings = unsafe { slice::from_raw_parts(couplings, n) };
        match dragforge::models::disjoint_qubits_model(offsets, couplings) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(m)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Anharmonic ladder with `d` levels, anharmonicity `delta`, and per-rung
/// couplings `couplings[0..d-1]` (entry 0 conventionally 1).
#[no_mangle]
pub extern "C" fn dragforge_model_ladder(
    d: usize,
    delta: f64,
    couplings: *const f64,
    n_couplings: usize,
    out: *mut *mut LevelSystem,
) -> dragforge_status {
    guarded(|| {
        if couplings.is_null() || out.is_null() {
            set_error("null pointer: couplings/out");
            return DRAGFORGE_NULL_POINTER;
        }
        let couplings = unsafe { slice::from_raw_parts(couplings, n_couplings) };
        match dragforge::models::anharmonic_ladder_model(d, delta, couplings) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(m)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn dragforge_model_free(model: *mut LevelSystem) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

// ---------------------------------------------------------------------------
// propagation
// ---------------------------------------------------------------------------

/// Propagate `pulse` through `model` over the pulse duration.
///
/// `method`: 0 = exponential midpoint (2nd order), 1 = 4th-order Magnus.
/// `steps_per_unit_time` ≤ 0 and `tolerance` ≤ 0 select the defaults
/// (32 and 1e-10).
#[no_mangle]
pub extern "C" fn dragforge_evolve(
    model: *const LevelSystem,
    pulse: *const ShapedPulse,
    method: i32,
    steps_per_unit_time: i64,
    tolerance: f64,
    out: *mut *mut UnitaryMatrix,
) -> dragforge_status {
    guarded(|| {
        let model = nonnull!(model);
        let pulse = nonnull!(pulse);
        if out.is_null() {
            set_error("null pointer: out");
            return DRAGFORGE_NULL_POINTER;
        }
        let method = match method {
            0 => Method::ExponentialMidpoint,
            1 => Method::Magnus4,
            other => {
                set_error(&format!("method must be 0 or 1, got {other}"));
                return DRAGFORGE_INVALID_ARGUMENT;
            }
        };
        let defaults = IntegratorConfig::default();
        let config = IntegratorConfig {
            method,
            steps_per_unit_time: if steps_per_unit_time > 0 {
                steps_per_unit_time as usize
            } else {
                defaults.steps_per_unit_time
            },
            tolerance: if tolerance > 0.0 { tolerance } else { defaults.tolerance },
        };
        match evolve(model, pulse, &config) {
            Ok(u) => {
                unsafe { *out = Box::into_raw(Box::new(u)) };
                DRAGFORGE_OK
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn dragforge_unitary_free(u: *mut UnitaryMatrix) {
    if !u.is_null() {
        drop(unsafe { Box::from_raw(u) });
    }
}

#[no_mangle]
pub extern "C" fn dragforge_unitary_dimension(u: *const UnitaryMatrix) -> usize {
    unsafe { u.as_ref() }.map_or(0, UnitaryMatrix::dimension)
}

/// ‖U†U − I‖ of the propagator.
#[no_mangle]
pub extern "C" fn dragforge_unitary_defect(u: *const UnitaryMatrix) -> f64 {
    unsafe { u.as_ref() }.map_or(f64::NAN, UnitaryMatrix::unitarity_defect)
}

/// Matrix element `U[row, col]` as (re, im).
#[no_mangle]
pub extern "C" fn dragforge_unitary_entry(
    u: *const UnitaryMatrix,
    row: usize,
    col: usize,
    re: *mut f64,
    im: *mut f64,
) -> dragforge_status {
    guarded(|| {
        let u = nonnull!(u);
        if re.is_null() || im.is_null() {
            set_error("null pointer: re/im");
            return DRAGFORGE_NULL_POINTER;
        }
        let d = u.dimension();
        if row >= d || col >= d {
            set_error(&format!("index ({row}, {col}) out of range for dimension {d}"));
            return DRAGFORGE_INVALID_ARGUMENT;
        }
        let z = u.entries()[(row, col)];
        unsafe {
            *re = z.re;
            *im = z.im;
        }
        DRAGFORGE_OK
    })
}

// ---------------------------------------------------------------------------
// experiment driver
// ---------------------------------------------------------------------------

/// Run a named experiment (`sweep-time`, `sweep-lambda`, `sweep-epsilon`,
/// `spectrum`, `simulate`, `rwa`) against INI-format config text, producing
/// the CSV report. Free the result with [`dragforge_string_free`].
#[no_mangle]
pub extern "C" fn dragforge_run(
    subcommand: *const c_char,
    config_text: *const c_char,
    out_csv: *mut *mut c_char,
) -> dragforge_status {
    guarded(|| {
        if subcommand.is_null() || config_text.is_null() || out_csv.is_null() {
            set_error("null pointer: subcommand/config_text/out_csv");
            return DRAGFORGE_NULL_POINTER;
        }
        let sub = match unsafe { CStr::from_ptr(subcommand) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("subcommand is not valid UTF-8");
                return DRAGFORGE_INVALID_ARGUMENT;
            }
        };
        let text = match unsafe { CStr::from_ptr(config_text) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("config text is not valid UTF-8");
                return DRAGFORGE_INVALID_ARGUMENT;
            }
        };
        let output = match Ini::parse(text).and_then(|ini| run(sub, &ini)) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
        match CString::new(output.csv.replace('\0', " ")) {
            Ok(s) => {
                unsafe { *out_csv = s.into_raw() };
                DRAGFORGE_OK
            }
            Err(_) => {
                set_error("report contained an interior NUL");
                return DRAGFORGE_INTERNAL_PANIC;
            }
        }
    })
}

/// Free a string returned by [`dragforge_run`].
#[no_mangle]
pub extern "C" fn dragforge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
