//! C ABI over the swarm simulator, the trained prediction model and the
//! covert power bound.
//!
//! # Conventions
//!
//! Every fallible function returns a [`GkcStatus`]; `GKC_STATUS_OK` is zero.
//! On failure a message is stored per thread and can be copied out with
//! [`gkc_last_error_message`]. Objects are opaque handles created by
//! `*_new`/`*_load`/`gkc_simulate` and released with the matching `*_free`.
//! Positions are flat `x, y, z` triples in metres, UAV-major.
//!
//! # Safety
//!
//! Pointers must be null or valid for the stated number of elements. Handles
//! must come from this library and must not be used after being freed.
//! Handles are not synchronised; do not share one across threads while it
//! is being freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gkae_covert::covert_eval::{transmit_power_bound, GroundNetwork, NetworkParams};
use gkae_covert::geom::Vec3;
use gkae_covert::gkae::{load_checkpoint, GkaeModel};
use gkae_covert::nn::Parameters;
use gkae_covert::swarm_sim::{simulate, SwarmConfig, Trajectory};
use gkae_covert::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: GkcStatus, msg: impl Into<String>) -> GkcStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> GkcStatus {
    let status = match err {
        Error::Io(_) => GkcStatus::Io,
        Error::Numeric(_) => GkcStatus::Numeric,
        _ => GkcStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

fn guard<F: FnOnce() -> GkcStatus>(f: F) -> GkcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(GkcStatus::Panic, "internal panic"),
    }
}

/// Length in bytes of the last error message, excluding the terminator.
#[no_mangle]
pub extern "C" fn gkc_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message, NUL-terminated, into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gkc_last_error_message(buf: *mut c_char, len: usize) -> GkcStatus {
    if buf.is_null() {
        return GkcStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if len < msg.len() + 1 {
            return GkcStatus::BufferTooSmall;
        }
        // SAFETY: caller guarantees `len` writable bytes, checked above.
        unsafe {
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, msg.len());
            *buf.add(msg.len()) = 0;
        }
        GkcStatus::Ok
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gkc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, GkcStatus> {
    if p.is_null() {
        return Err(fail(GkcStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null, caller promises a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(GkcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn positions_arg(p: *const f64, count: usize, what: &str) -> Result<Vec<Vec3>, GkcStatus> {
    if p.is_null() {
        return Err(fail(GkcStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: caller promises `3 * count` readable values.
    let flat = unsafe { std::slice::from_raw_parts(p, 3 * count) };
    Ok(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

/// Simulated trajectory handle.
pub struct GkcTrajectory(Trajectory);

/// Trained model handle.
pub struct GkcModel(GkaeModel);

/// Simulates one trajectory. `config_json` holds swarm settings (null or
/// `"{}"` for the defaults).
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkc_simulate(config_json: *const c_char, out: *mut *mut GkcTrajectory) -> GkcStatus {
    guard(|| {
        if out.is_null() {
            return fail(GkcStatus::NullPointer, "out is null");
        }
        let cfg = if config_json.is_null() {
            SwarmConfig::default()
        } else {
            // SAFETY: forwarded caller contract.
            let text = match unsafe { str_arg(config_json, "config_json") } {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(GkcStatus::InvalidArgument, format!("config: {e}")),
            }
        };
        match simulate(&cfg) {
            Ok(t) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(GkcTrajectory(t))) };
                GkcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkc_trajectory_num_frames(traj: *const GkcTrajectory) -> usize {
    // SAFETY: caller contract.
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.len())
}

/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkc_trajectory_num_uavs(traj: *const GkcTrajectory) -> usize {
    // SAFETY: caller contract.
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.num_uavs())
}

/// Copies the positions of `frame` (`3 * L` values) into `out`.
///
/// # Safety
/// `traj` must be a live handle and `out` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn gkc_trajectory_positions(
    traj: *const GkcTrajectory,
    frame: usize,
    out: *mut f64,
    len: usize,
) -> GkcStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(t) = (unsafe { traj.as_ref() }) else {
            return fail(GkcStatus::NullPointer, "trajectory is null");
        };
        if out.is_null() {
            return fail(GkcStatus::NullPointer, "out is null");
        }
        if frame >= t.0.len() {
            return fail(GkcStatus::InvalidArgument, format!("frame {frame} out of range"));
        }
        let pos = t.0.positions(frame);
        if len < 3 * pos.len() {
            return fail(GkcStatus::BufferTooSmall, format!("need {} values", 3 * pos.len()));
        }
        // SAFETY: `out` holds at least `3 L` values.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * pos.len()) };
        for (d, p) in dst.chunks_exact_mut(3).zip(&pos) {
            d.copy_from_slice(&p.0);
        }
        GkcStatus::Ok
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gkc_trajectory_free(traj: *mut GkcTrajectory) {
    if !traj.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gkc_model_load(path: *const c_char, out: *mut *mut GkcModel) -> GkcStatus {
    guard(|| {
        if out.is_null() {
            return fail(GkcStatus::NullPointer, "out is null");
        }
        // SAFETY: forwarded caller contract.
        let path = match unsafe { str_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(m) => {
                // SAFETY: `out` checked non-null.
                unsafe { *out = Box::into_raw(Box::new(GkcModel(m))) };
                GkcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkc_model_num_uavs(model: *const GkcModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.0.dims.num_uavs)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gkc_model_num_params(model: *const GkcModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.0.num_params())
}

/// Predicts `horizon` steps from one frame of `num_uavs` positions (m).
/// Writes `horizon * num_uavs * 3` values to `out`, step-major.
///
/// # Safety
/// `model` must be live, `positions` valid for `3 num_uavs` values and `out`
/// for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn gkc_model_rollout(
    model: *const GkcModel,
    positions: *const f64,
    num_uavs: usize,
    horizon: usize,
    out: *mut f64,
    out_len: usize,
) -> GkcStatus {
    guard(|| {
        // SAFETY: caller contract.
        let Some(m) = (unsafe { model.as_ref() }) else {
            return fail(GkcStatus::NullPointer, "model is null");
        };
        // SAFETY: forwarded caller contract.
        let pos = match unsafe { positions_arg(positions, num_uavs, "positions") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(GkcStatus::NullPointer, "out is null");
        }
        let need = horizon * num_uavs * 3;
        if out_len < need {
            return fail(GkcStatus::BufferTooSmall, format!("need {need} values"));
        }
        let frames = match m.0.snapshot_from_positions(&pos, 0.0).and_then(|s| m.0.rollout_predict(&s, horizon)) {
            Ok(f) => f,
            Err(e) => return from_error(e),
        };
        // SAFETY: `out` holds at least `need` values.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (d, p) in dst.chunks_exact_mut(3).zip(frames.iter().flatten()) {
            d.copy_from_slice(&p.0);
        }
        GkcStatus::Ok
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gkc_model_free(model: *mut GkcModel) {
    if !model.is_null() {
        // SAFETY: created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Covert power bound of `num_nodes` ground nodes (z = 0) for one frame of
/// `num_uavs` UAVs, starting from the given nominal powers.
///
/// # Safety
/// `uavs` and `nodes` must hold `3 num_uavs` and `3 num_nodes` values;
/// `nominal` and `out` must hold `num_nodes` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gkc_transmit_power_bound(
    uavs: *const f64,
    num_uavs: usize,
    nodes: *const f64,
    num_nodes: usize,
    nominal: *const f64,
    p_det: f64,
    eta: f64,
    out: *mut f64,
) -> GkcStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (u, n) = match unsafe { (positions_arg(uavs, num_uavs, "uavs"), positions_arg(nodes, num_nodes, "nodes")) } {
            (Ok(u), Ok(n)) => (u, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if nominal.is_null() || out.is_null() {
            return fail(GkcStatus::NullPointer, "nominal or out is null");
        }
        // SAFETY: caller promises `num_nodes` values.
        let nominal = unsafe { std::slice::from_raw_parts(nominal, num_nodes) };
        let params = NetworkParams {
            eta,
            ..NetworkParams::default()
        };
        let result = GroundNetwork::new(n, params).and_then(|net| transmit_power_bound(&net, &u, p_det, nominal));
        match result {
            Ok(p) => {
                // SAFETY: `out` holds `num_nodes` values.
                unsafe { std::slice::from_raw_parts_mut(out, num_nodes) }.copy_from_slice(&p);
                GkcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
