//! C interface to the `flagellum` simulator and controller.
//!
//! Objects are opaque handles created by `flg_*_new` and released by the
//! matching `flg_*_free`. Every fallible call returns an [`FlgStatus`]; on
//! failure [`flg_last_error`] describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use flagellum::control::{compute_t_app, ControlConfig, ControlInput, Controller};
use flagellum::learning::InverseMaps;
use flagellum::rod::RodState;
use flagellum::stepper::{Simulator, StepControls};
use flagellum::{io, Error, PhysicalParameters, Vec3};

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlgStatus {
    Ok = 0,
    /// Bad argument, configuration or input file.
    InvalidInput = 1,
    /// Solver or training failure.
    Numerical = 2,
    /// A null handle or pointer where one was required.
    NullPointer = 3,
    /// Internal panic; the handle involved should be freed.
    Panic = 4,
}

pub struct FlgSimulator(Simulator);
pub struct FlgState(RodState);
pub struct FlgMaps(InverseMaps);
pub struct FlgController(Controller);

/// One controller observation. Null pointers mark absent fields.
#[repr(C)]
pub struct FlgControlInput {
    pub t: f64,
    /// `history_len` head positions, newest first, as `x, y, z` triples.
    pub head_history: *const f64,
    pub history_len: usize,
    pub x1: *const f64,
    pub x2: *const f64,
    pub p1: *const f64,
    pub p2: *const f64,
    /// Nonzero when `p1` is the last waypoint.
    pub final_leg: i32,
    pub omega: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> FlgStatus {
    set_error(&e.to_string());
    if e.exit_code() == 2 {
        FlgStatus::Numerical
    } else {
        FlgStatus::InvalidInput
    }
}

fn guard(f: impl FnOnce() -> Result<(), FlgStatus>) -> FlgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlgStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            FlgStatus::Panic
        }
    }
}

fn null(what: &str) -> FlgStatus {
    set_error(&format!("null pointer: {what}"));
    FlgStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FlgStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        FlgStatus::InvalidInput
    })
}

unsafe fn vec3_arg(p: *const f64) -> Option<Vec3> {
    (!p.is_null()).then(|| Vec3::new(*p, *p.add(1), *p.add(2)))
}

unsafe fn publish<T>(out: *mut *mut T, value: T) -> Result<(), FlgStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn flg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a simulator. `params_json` and `controls_json` are JSON objects
/// in the format of the run configuration's `physical` and `solver`
/// sections; null selects the coarse preset and default controls.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_simulator_new(
    params_json: *const c_char,
    controls_json: *const c_char,
    out: *mut *mut FlgSimulator,
) -> FlgStatus {
    guard(|| {
        let params = if params_json.is_null() {
            PhysicalParameters::desk()
        } else {
            serde_json::from_str(str_arg(params_json, "params_json")?)
                .map_err(|e| fail(e.into()))?
        };
        let controls = if controls_json.is_null() {
            StepControls::default()
        } else {
            serde_json::from_str(str_arg(controls_json, "controls_json")?)
                .map_err(|e| fail(e.into()))?
        };
        let sim = Simulator::new(params, controls).map_err(fail)?;
        publish(out, FlgSimulator(sim))
    })
}

/// # Safety
/// `sim` must be null or a handle from [`flg_simulator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flg_simulator_free(sim: *mut FlgSimulator) {
    free(sim)
}

/// Integration time step [s].
///
/// # Safety
/// `sim` must be a live handle; `dt` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_simulator_time_step(
    sim: *const FlgSimulator,
    dt: *mut f64,
) -> FlgStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), dt.is_null()) else {
            return Err(null("sim or dt"));
        };
        *dt = sim.0.time_step();
        Ok(())
    })
}

/// As-built robot at rest.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_state_new(
    sim: *const FlgSimulator,
    out: *mut *mut FlgState,
) -> FlgStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        publish(out, FlgState(sim.0.initial_state().map_err(fail)?))
    })
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flg_state_free(state: *mut FlgState) {
    free(state)
}

/// Advances `state` in place by `n_steps` steps at motor rate `omega`
/// [rad/s]. On failure the state is left unchanged.
///
/// # Safety
/// `sim` and `state` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn flg_state_advance(
    sim: *const FlgSimulator,
    state: *mut FlgState,
    omega: f64,
    n_steps: usize,
) -> FlgStatus {
    guard(|| {
        let (Some(sim), Some(state)) = (sim.as_ref(), state.as_mut()) else {
            return Err(null("sim or state"));
        };
        if !omega.is_finite() {
            set_error("omega must be finite");
            return Err(FlgStatus::InvalidInput);
        }
        state.0 = sim.0.advance(&state.0, omega, n_steps).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `state` must be a live handle; `t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_state_time(state: *const FlgState, t: *mut f64) -> FlgStatus {
    guard(|| {
        let (Some(state), false) = (state.as_ref(), t.is_null()) else {
            return Err(null("state or t"));
        };
        *t = state.0.time;
        Ok(())
    })
}

/// Number of nodes, head center included.
///
/// # Safety
/// `state` must be a live handle; `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_state_node_count(state: *const FlgState, n: *mut usize) -> FlgStatus {
    guard(|| {
        let (Some(state), false) = (state.as_ref(), n.is_null()) else {
            return Err(null("state or n"));
        };
        *n = state.0.node_count();
        Ok(())
    })
}

/// Position of node `j` (0 is the head center) into `xyz[3]`.
///
/// # Safety
/// `state` must be a live handle; `xyz` must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn flg_state_node_position(
    state: *const FlgState,
    j: usize,
    xyz: *mut f64,
) -> FlgStatus {
    guard(|| {
        let (Some(state), false) = (state.as_ref(), xyz.is_null()) else {
            return Err(null("state or xyz"));
        };
        if j >= state.0.node_count() {
            set_error(&format!(
                "node {j} out of range 0..{}",
                state.0.node_count()
            ));
            return Err(FlgStatus::InvalidInput);
        }
        let p = state.0.position(j);
        std::slice::from_raw_parts_mut(xyz, 3).copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Loads the inverse maps from a model directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_maps_load(dir: *const c_char, out: *mut *mut FlgMaps) -> FlgStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        publish(out, FlgMaps(io::load_models(Path::new(dir)).map_err(fail)?))
    })
}

/// # Safety
/// `maps` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flg_maps_free(maps: *mut FlgMaps) {
    free(maps)
}

/// Wait before the pulse [s]; angles in degrees, `omega_rpm` the body-frame
/// spin and `v` the straight-swimming speed [m/s].
///
/// # Safety
/// `t_app` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_compute_t_app(
    beta_d: f64,
    beta: f64,
    l_d: f64,
    l: f64,
    omega_rpm: f64,
    v: f64,
    t_app: *mut f64,
) -> FlgStatus {
    guard(|| {
        if t_app.is_null() {
            return Err(null("t_app"));
        }
        if !(omega_rpm > 0.0 && v > 0.0) || ![beta_d, beta, l_d, l].iter().all(|x| x.is_finite()) {
            set_error("t_app needs finite inputs with omega_rpm > 0 and v > 0");
            return Err(FlgStatus::InvalidInput);
        }
        *t_app = compute_t_app(beta_d, beta, l_d, l, omega_rpm, v);
        Ok(())
    })
}

/// Creates a controller from a JSON object in the format of the run
/// configuration's `control` section; null selects the defaults.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_controller_new(
    config_json: *const c_char,
    out: *mut *mut FlgController,
) -> FlgStatus {
    guard(|| {
        let config: ControlConfig = if config_json.is_null() {
            ControlConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| fail(e.into()))?
        };
        publish(out, FlgController(Controller::new(config).map_err(fail)?))
    })
}

/// # Safety
/// `ctl` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flg_controller_free(ctl: *mut FlgController) {
    free(ctl)
}

/// Feeds one observation and writes the rate for the next interval [rad/s].
///
/// # Safety
/// Handles must be live; every non-null pointer in `input` must point to
/// the documented number of doubles; `omega` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flg_controller_step(
    ctl: *mut FlgController,
    maps: *const FlgMaps,
    input: *const FlgControlInput,
    omega: *mut f64,
) -> FlgStatus {
    guard(|| {
        let (Some(ctl), Some(maps), Some(input), false) =
            (ctl.as_mut(), maps.as_ref(), input.as_ref(), omega.is_null())
        else {
            return Err(null("ctl, maps, input or omega"));
        };
        let head_history = if input.head_history.is_null() {
            Vec::new()
        } else {
            std::slice::from_raw_parts(input.head_history, 3 * input.history_len)
                .chunks_exact(3)
                .map(|c| Some(Vec3::new(c[0], c[1], c[2])))
                .collect()
        };
        let obs = ControlInput {
            t: input.t,
            head_history,
            x1: vec3_arg(input.x1),
            x2: vec3_arg(input.x2),
            p1: vec3_arg(input.p1),
            p2: vec3_arg(input.p2),
            final_leg: input.final_leg != 0,
            omega: input.omega,
        };
        *omega = ctl.0.step(&obs, &maps.0).omega;
        Ok(())
    })
}
