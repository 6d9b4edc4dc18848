//! C ABI for the mvflow laboratory.
//!
//! Objects cross the boundary as opaque handles created by `mvf_*_new` or
//! `mvf_*_parse`/`mvf_run` and released with the matching `mvf_*_free`.
//! Every fallible call returns an [`MvfStatus`]; the message of the last
//! failure on the calling thread is available from [`mvf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mvflow::cli::commands::run_spec;
use mvflow::cli::{parse_config_str, RunConfig};
use mvflow::diagnostics::{energy_budget, energy_defect, poincare_constant};
use mvflow::mesh::{Boundary, Grid};
use mvflow::pressure::PressureLaw;
use mvflow::reference::TravellingWave;
use mvflow::relative_energy::relative_energy_atomic;
use mvflow::solver::{run, TrajectoryRecord};
use mvflow::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Domain = 4,
    Positivity = 5,
    Runtime = 6,
    Io = 7,
    Panic = 8,
}

/// A barotropic pressure law.
pub struct MvfPressureLaw(PressureLaw);

/// A validated run configuration.
pub struct MvfConfig(RunConfig);

/// Snapshots of a finished run.
pub struct MvfTrajectory(TrajectoryRecord);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MvfStatus {
    match e {
        Error::Validation(_) | Error::Config(_) => MvfStatus::Validation,
        Error::Domain(_) | Error::NonFinite { .. } | Error::Precondition(_) => MvfStatus::Domain,
        Error::Positivity { .. } | Error::TimeStepUnderflow { .. } => MvfStatus::Positivity,
        Error::Io { .. } => MvfStatus::Io,
        _ => MvfStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MvfStatus, String)>) -> MvfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MvfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside mvflow");
            MvfStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MvfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MvfStatus, String) {
    (MvfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MvfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), (MvfStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mvf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mvf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `p(s) = a s^gamma`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_pressure_law_new(a: f64, gamma: f64, out: *mut *mut MvfPressureLaw) -> MvfStatus {
    guard(|| {
        if !(a > 0.0 && gamma >= 1.0) {
            return Err((
                MvfStatus::InvalidArgument,
                format!("need a > 0 and gamma >= 1, got a = {a}, gamma = {gamma}"),
            ));
        }
        put(out, Box::into_raw(Box::new(MvfPressureLaw(PressureLaw::power_law(a, gamma)))))
    })
}

/// # Safety
/// `law` must be null or a handle from [`mvf_pressure_law_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvf_pressure_law_free(law: *mut MvfPressureLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Pressure `p(s)` and potential `P(s)`.
///
/// # Safety
/// `law` must be a live handle; `p` and `potential` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_pressure_law_eval(
    law: *const MvfPressureLaw,
    s: f64,
    p: *mut f64,
    potential: *mut f64,
) -> MvfStatus {
    guard(|| {
        let law = &get(law, "law")?.0;
        put(p, law.pressure(s).map_err(lib)?)?;
        put(potential, law.pressure_potential(s).map_err(lib)?)
    })
}

/// `P(s) - P'(r)(s - r) - P(r)`.
///
/// # Safety
/// `law` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_helmholtz_distance(
    law: *const MvfPressureLaw,
    s: f64,
    r: f64,
    out: *mut f64,
) -> MvfStatus {
    guard(|| {
        let law = &get(law, "law")?.0;
        put(out, law.helmholtz_distance(s, r).map_err(lib)?)
    })
}

/// Smallest `c` with `int u^2 <= c int |u'|^2` on a no-slip grid of
/// `cells` cells over `[0, extent]`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_poincare_constant(cells: usize, extent: f64, out: *mut f64) -> MvfStatus {
    guard(|| {
        let grid = Grid::new_1d(cells, extent, Boundary::NoSlip).map_err(lib)?;
        put(out, poincare_constant(&grid).map_err(lib)?)
    })
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_config_parse(toml: *const c_char, out: *mut *mut MvfConfig) -> MvfStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (MvfStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = parse_config_str(text).map_err(lib)?;
        put(out, Box::into_raw(Box::new(MvfConfig(cfg))))
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`mvf_config_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvf_config_free(cfg: *mut MvfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a configuration to completion.
///
/// # Safety
/// `cfg` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_run(cfg: *const MvfConfig, out: *mut *mut MvfTrajectory) -> MvfStatus {
    guard(|| {
        let cfg = &get(cfg, "config")?.0;
        let spec = run_spec(cfg).map_err(lib)?;
        let rec = run(&spec).map_err(|f| lib(f.error))?;
        put(out, Box::into_raw(Box::new(MvfTrajectory(rec))))
    })
}

/// # Safety
/// `traj` must be null or a handle from [`mvf_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvf_trajectory_free(traj: *mut MvfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of snapshots and number of cells.
///
/// # Safety
/// `traj` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_trajectory_shape(
    traj: *const MvfTrajectory,
    snapshots: *mut usize,
    cells: *mut usize,
) -> MvfStatus {
    guard(|| {
        let t = &get(traj, "trajectory")?.0;
        put(snapshots, t.len())?;
        put(cells, t.cells)
    })
}

fn snapshot(t: &TrajectoryRecord, j: usize) -> Result<&mvflow::solver::FlowState, (MvfStatus, String)> {
    t.states.get(j).ok_or_else(|| {
        (
            MvfStatus::InvalidArgument,
            format!("snapshot {j} out of range (have {})", t.len()),
        )
    })
}

/// Time of snapshot `j` and its cell densities copied into `rho`
/// (`len` must equal the number of cells).
///
/// # Safety
/// `traj` must be a live handle; `time` valid for writes; `rho` valid for
/// `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_trajectory_density(
    traj: *const MvfTrajectory,
    j: usize,
    time: *mut f64,
    rho: *mut f64,
    len: usize,
) -> MvfStatus {
    guard(|| {
        let t = &get(traj, "trajectory")?.0;
        let s = snapshot(t, j)?;
        if rho.is_null() {
            return Err(null("rho"));
        }
        if len != s.rho.len() {
            return Err((
                MvfStatus::InvalidArgument,
                format!("buffer holds {len} values, snapshot has {}", s.rho.len()),
            ));
        }
        ptr::copy_nonoverlapping(s.rho.as_ptr(), rho, len);
        put(time, s.time)
    })
}

/// Largest absolute and largest signed per-interval energy-budget residual.
///
/// # Safety
/// `traj` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_trajectory_budget(
    traj: *const MvfTrajectory,
    max_abs: *mut f64,
    max_signed: *mut f64,
) -> MvfStatus {
    guard(|| {
        let b = energy_budget(&get(traj, "trajectory")?.0);
        put(max_abs, b.max_abs)?;
        put(max_signed, b.max_signed)
    })
}

/// Relative energy of snapshot `j` against the built-in travelling-wave
/// reference, and the run's dissipation defect at that snapshot.
///
/// # Safety
/// `traj` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mvf_trajectory_relative_energy(
    traj: *const MvfTrajectory,
    j: usize,
    energy: *mut f64,
    defect: *mut f64,
) -> MvfStatus {
    guard(|| {
        let t = &get(traj, "trajectory")?.0;
        let s = snapshot(t, j)?;
        let e = relative_energy_atomic(s, &t.grid(), &TravellingWave, &t.params.law).map_err(lib)?;
        put(energy, e)?;
        put(defect, energy_defect(t)[j])
    })
}
