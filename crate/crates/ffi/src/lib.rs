//! C ABI for the qepi library: opaque model handles, status codes, and
//! flat buffers. Every entry point catches panics, stores a per-thread
//! error message retrievable via [`qepi_last_error`], and returns a
//! [`QepiStatus`].
//!
//! Callers own the handles they receive and must release them with
//! [`qepi_model_free`]; output buffers are caller-allocated with the
//! lengths documented on each function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qepi::annealer::{AnnealParams, RemoteConfig};
use qepi::dp::value_iteration;
use qepi::env::EnvParams;
use qepi::grid::{build_transition_model, GridSpec, TransitionModel};
use qepi::qepi::{run_qepi, QepiConfig, SolverChoice};
use qepi::qubo::BinaryEncoding;
use qepi::Error;

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QepiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CapacityExceeded = 3,
    SolverFailure = 4,
    RemoteFailure = 5,
    IoFailure = 6,
    ParseFailure = 7,
    Panic = 8,
}

/// QUBO backend selector for [`QepiRunConfig`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QepiSolver {
    Simulated = 0,
    BruteForce = 1,
    Remote = 2,
}

/// Parameters for [`qepi_run`]. Obtain defaults from
/// [`qepi_run_config_default`] and override selectively.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QepiRunConfig {
    /// Discount factor in [0, 1).
    pub gamma: f64,
    /// Bits per encoded state value.
    pub bits_per_value: usize,
    /// Most negative representable value.
    pub x_min: f64,
    /// Independent anneal restarts per solve.
    pub num_anneals: usize,
    /// Sweeps per anneal.
    pub duration_steps: usize,
    /// Master seed.
    pub seed: u64,
    /// Policy-update budget.
    pub max_policy_updates: usize,
    /// QUBO backend.
    pub solver: QepiSolver,
    /// Endpoint for `Remote`; ignored otherwise. May be null for
    /// non-remote solvers.
    pub remote_url: *const c_char,
}

/// Discretized mountain-car model plus the grid it lives on.
pub struct QepiModel {
    params: EnvParams,
    grid: GridSpec,
    model: TransitionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn record_error(message: &str) {
    let sanitized = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("unrepresentable error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = sanitized);
}

fn status_of(err: &Error) -> QepiStatus {
    match err {
        Error::Domain(_) | Error::Config(_) => QepiStatus::InvalidArgument,
        Error::Capacity(_) => QepiStatus::CapacityExceeded,
        Error::Solver(_) => QepiStatus::SolverFailure,
        Error::Remote(_) => QepiStatus::RemoteFailure,
        Error::Parse(_) => QepiStatus::ParseFailure,
        Error::Io(_) => QepiStatus::IoFailure,
    }
}

fn fail(err: &Error) -> QepiStatus {
    record_error(&err.to_string());
    status_of(err)
}

fn null_arg(name: &str) -> QepiStatus {
    record_error(&format!("{name} must not be null"));
    QepiStatus::NullPointer
}

/// Runs `body` with panics converted to [`QepiStatus::Panic`].
fn guarded(body: impl FnOnce() -> QepiStatus) -> QepiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".into());
            record_error(&message);
            QepiStatus::Panic
        }
    }
}

unsafe fn read_path(path: *const c_char) -> Result<String, QepiStatus> {
    if path.is_null() {
        return Err(null_arg("path"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(s.to_string()),
        Err(_) => {
            record_error("path is not valid UTF-8");
            Err(QepiStatus::InvalidArgument)
        }
    }
}

/// Message from the most recent failing call on this thread.
///
/// # Safety
/// The pointer is valid until the next failing call on the same thread;
/// do not free it.
#[no_mangle]
pub unsafe extern "C" fn qepi_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds the model for an `n_pos` x `n_vel` grid with the standard
/// mountain-car physics and writes a handle to `out`.
///
/// # Safety
/// `out` must point to writable storage for one pointer. The handle
/// must be released with [`qepi_model_free`].
#[no_mangle]
pub unsafe extern "C" fn qepi_model_build(
    n_pos: usize,
    n_vel: usize,
    out: *mut *mut QepiModel,
) -> QepiStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let params = EnvParams::default();
        let grid = match GridSpec::new(n_pos, n_vel, &params) {
            Ok(grid) => grid,
            Err(e) => return fail(&e),
        };
        let model = match build_transition_model(&params, &grid) {
            Ok(model) => model,
            Err(e) => return fail(&e),
        };
        let handle = Box::new(QepiModel { params, grid, model });
        unsafe { out.write(Box::into_raw(handle)) };
        QepiStatus::Ok
    })
}

/// Reads a model previously written by [`qepi_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one pointer. The handle must be released with
/// [`qepi_model_free`].
#[no_mangle]
pub unsafe extern "C" fn qepi_model_load(
    path: *const c_char,
    out: *mut *mut QepiModel,
) -> QepiStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match unsafe { read_path(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => return fail(&Error::Io(e)),
        };
        let model = match TransitionModel::load(&text) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let params = EnvParams::default();
        let grid = match GridSpec::new(model.shape().0, model.shape().1, &params) {
            Ok(g) => g,
            Err(e) => return fail(&e),
        };
        let handle = Box::new(QepiModel { params, grid, model });
        unsafe { out.write(Box::into_raw(handle)) };
        QepiStatus::Ok
    })
}

/// Writes the model as line-oriented text readable by
/// [`qepi_model_load`].
///
/// # Safety
/// `model` must be a live handle from this library; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_save(
    model: *const QepiModel,
    path: *const c_char,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        let path = match unsafe { read_path(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match std::fs::write(&path, handle.model.dump()) {
            Ok(()) => QepiStatus::Ok,
            Err(e) => fail(&Error::Io(e)),
        }
    })
}

/// Releases a handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be null or a live handle from this library; the handle
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_free(model: *mut QepiModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of grid states; the length of every per-state buffer below.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage
/// for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_num_states(
    model: *const QepiModel,
    out: *mut usize,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { out.write(handle.model.num_states()) };
        QepiStatus::Ok
    })
}

/// Number of actions (always 3 for mountain car).
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage
/// for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_action_count(
    model: *const QepiModel,
    out: *mut usize,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { out.write(handle.model.action_count()) };
        QepiStatus::Ok
    })
}

/// Largest per-axis cell distance any transition covers.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage
/// for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_bandwidth(
    model: *const QepiModel,
    out: *mut usize,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { out.write(handle.model.bandwidth()) };
        QepiStatus::Ok
    })
}

/// Runs value iteration and optionally extracts the greedy policy.
///
/// `values_out` receives one `double` per state. `policy_out`, when
/// non-null, receives one action index per state. `converged_out`, when
/// non-null, reports whether the sweep tolerance was met.
///
/// # Safety
/// `model` must be a live handle; `values_out` must hold
/// `qepi_model_num_states` doubles; `policy_out` null or the same count
/// of `uint32_t`; `converged_out` null or one `bool`.
#[no_mangle]
pub unsafe extern "C" fn qepi_value_iteration(
    model: *const QepiModel,
    gamma: f64,
    max_sweeps: usize,
    tol: f64,
    values_out: *mut f64,
    policy_out: *mut u32,
    converged_out: *mut bool,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if values_out.is_null() {
            return null_arg("values_out");
        }
        let outcome = match value_iteration(&handle.model, gamma, max_sweeps, tol) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        let values = outcome.values.as_slice();
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), values_out, values.len()) };
        if !policy_out.is_null() {
            let policy = qepi::dp::greedy_policy(&handle.model, &outcome.values, gamma);
            for (i, &a) in policy.actions().iter().enumerate() {
                unsafe { policy_out.add(i).write(a as u32) };
            }
        }
        if !converged_out.is_null() {
            unsafe { converged_out.write(outcome.converged) };
        }
        QepiStatus::Ok
    })
}

/// Fills `out` with the library defaults: gamma 0.99, 10 bits from
/// -100, 100 anneals of 1280 sweeps, seed 0, 10 policy updates, the
/// built-in annealer.
///
/// # Safety
/// `out` must point to writable storage for one `QepiRunConfig`.
#[no_mangle]
pub unsafe extern "C" fn qepi_run_config_default(out: *mut QepiRunConfig) -> QepiStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let defaults = QepiConfig::default();
        let anneal = defaults.anneal;
        unsafe {
            out.write(QepiRunConfig {
                gamma: defaults.gamma,
                bits_per_value: defaults.encoding.n_b(),
                x_min: defaults.encoding.x_min(),
                num_anneals: anneal.num_anneals,
                duration_steps: anneal.duration_steps,
                seed: anneal.seed,
                max_policy_updates: defaults.max_policy_updates,
                solver: QepiSolver::Simulated,
                remote_url: ptr::null(),
            })
        };
        QepiStatus::Ok
    })
}

/// Runs annealed policy iteration to convergence or the update budget.
///
/// `values_out` receives the final decoded value per state and
/// `policy_out` the final action per state. `updates_out` and
/// `converged_out`, when non-null, receive the number of policy updates
/// performed and whether the policy reached a fixed point.
///
/// # Safety
/// `model` must be a live handle; `config` must point to one
/// `QepiRunConfig` whose `remote_url`, when used, is NUL-terminated;
/// `values_out` must hold `qepi_model_num_states` doubles and
/// `policy_out` the same count of `uint32_t`; `updates_out` null or one
/// `usize`; `converged_out` null or one `bool`.
#[no_mangle]
pub unsafe extern "C" fn qepi_run(
    model: *const QepiModel,
    config: *const QepiRunConfig,
    values_out: *mut f64,
    policy_out: *mut u32,
    updates_out: *mut usize,
    converged_out: *mut bool,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        let Some(config) = (unsafe { config.as_ref() }) else {
            return null_arg("config");
        };
        if values_out.is_null() {
            return null_arg("values_out");
        }
        if policy_out.is_null() {
            return null_arg("policy_out");
        }
        let encoding = match BinaryEncoding::new(config.bits_per_value, config.x_min) {
            Ok(enc) => enc,
            Err(e) => return fail(&e),
        };
        let solver = match config.solver {
            QepiSolver::Simulated => SolverChoice::Simulated,
            QepiSolver::BruteForce => SolverChoice::BruteForce,
            QepiSolver::Remote => {
                if config.remote_url.is_null() {
                    return null_arg("config.remote_url");
                }
                match unsafe { CStr::from_ptr(config.remote_url) }.to_str() {
                    Ok(url) => SolverChoice::Remote(RemoteConfig::new(url.to_string())),
                    Err(_) => {
                        record_error("remote_url is not valid UTF-8");
                        return QepiStatus::InvalidArgument;
                    }
                }
            }
        };
        let cfg = QepiConfig {
            gamma: config.gamma,
            encoding,
            anneal: AnnealParams {
                duration_steps: config.duration_steps,
                num_anneals: config.num_anneals,
                seed: config.seed,
                ..AnnealParams::default()
            },
            max_policy_updates: config.max_policy_updates,
            solver,
        };
        let (policy, values, history) = match run_qepi(&handle.model, &cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let slice = values.as_slice();
        unsafe { ptr::copy_nonoverlapping(slice.as_ptr(), values_out, slice.len()) };
        for (i, &a) in policy.actions().iter().enumerate() {
            unsafe { policy_out.add(i).write(a as u32) };
        }
        if !updates_out.is_null() {
            unsafe { updates_out.write(history.updates.len()) };
        }
        if !converged_out.is_null() {
            unsafe { converged_out.write(history.converged) };
        }
        QepiStatus::Ok
    })
}

/// Cell index of a continuous state, for policy lookups during
/// rollouts.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage
/// for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn qepi_model_state_index(
    model: *const QepiModel,
    position: f64,
    velocity: f64,
    out: *mut usize,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if !position.is_finite() || !velocity.is_finite() {
            record_error("state coordinates must be finite");
            return QepiStatus::InvalidArgument;
        }
        let (ip, iv) = handle.grid.cell_of(qepi::env::ContState { position, velocity });
        unsafe { out.write(handle.grid.flat_index(ip, iv)) };
        QepiStatus::Ok
    })
}

/// Advances the continuous dynamics one step under `action`, writing
/// the successor, reward, and terminal flag.
///
/// # Safety
/// `model` must be a live handle; the four out-pointers must each point
/// to writable storage of the indicated type.
#[no_mangle]
pub unsafe extern "C" fn qepi_env_step(
    model: *const QepiModel,
    position: f64,
    velocity: f64,
    action: u32,
    position_out: *mut f64,
    velocity_out: *mut f64,
    reward_out: *mut f64,
    terminal_out: *mut bool,
) -> QepiStatus {
    guarded(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if position_out.is_null() || velocity_out.is_null() {
            return null_arg("position_out/velocity_out");
        }
        let state = qepi::env::ContState { position, velocity };
        let outcome = match qepi::env::step(state, action as usize, &handle.params) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        unsafe {
            position_out.write(outcome.state.position);
            velocity_out.write(outcome.state.velocity);
            if !reward_out.is_null() {
                reward_out.write(outcome.reward);
            }
            if !terminal_out.is_null() {
                terminal_out.write(outcome.terminal);
            }
        }
        QepiStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(n_pos: usize, n_vel: usize) -> *mut QepiModel {
        let mut handle: *mut QepiModel = ptr::null_mut();
        let status = unsafe { qepi_model_build(n_pos, n_vel, &mut handle) };
        assert_eq!(status, QepiStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(qepi_last_error()).to_string_lossy().into_owned() }
    }

    #[test]
    fn build_and_inspect_model() {
        let handle = build(8, 8);
        let mut states = 0usize;
        let mut actions = 0usize;
        let mut bandwidth = 0usize;
        unsafe {
            assert_eq!(qepi_model_num_states(handle, &mut states), QepiStatus::Ok);
            assert_eq!(qepi_model_action_count(handle, &mut actions), QepiStatus::Ok);
            assert_eq!(qepi_model_bandwidth(handle, &mut bandwidth), QepiStatus::Ok);
            qepi_model_free(handle);
        }
        assert_eq!(states, 64);
        assert_eq!(actions, 3);
        assert!(bandwidth >= 1);
    }

    #[test]
    fn null_arguments_are_reported() {
        let status = unsafe { qepi_model_build(4, 4, ptr::null_mut()) };
        assert_eq!(status, QepiStatus::NullPointer);
        assert!(last_error().contains("null"), "{}", last_error());

        let mut states = 0usize;
        assert_eq!(
            unsafe { qepi_model_num_states(ptr::null(), &mut states) },
            QepiStatus::NullPointer
        );
        unsafe { qepi_model_free(ptr::null_mut()) };
    }

    #[test]
    fn invalid_grid_is_an_invalid_argument() {
        let mut handle: *mut QepiModel = ptr::null_mut();
        let status = unsafe { qepi_model_build(0, 4, &mut handle) };
        assert_eq!(status, QepiStatus::InvalidArgument);
        assert!(handle.is_null());
        assert!(!last_error().is_empty());
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        let c_path = CString::new(path.to_str().unwrap()).unwrap();

        let handle = build(6, 5);
        unsafe {
            assert_eq!(qepi_model_save(handle, c_path.as_ptr()), QepiStatus::Ok);
            let mut reloaded: *mut QepiModel = ptr::null_mut();
            assert_eq!(qepi_model_load(c_path.as_ptr(), &mut reloaded), QepiStatus::Ok);
            let (mut a, mut b) = (0usize, 0usize);
            qepi_model_num_states(handle, &mut a);
            qepi_model_num_states(reloaded, &mut b);
            assert_eq!(a, b);
            qepi_model_free(reloaded);
            qepi_model_free(handle);
        }
    }

    #[test]
    fn load_of_missing_file_is_io_failure() {
        let c_path = CString::new("/no/such/file.txt").unwrap();
        let mut handle: *mut QepiModel = ptr::null_mut();
        let status = unsafe { qepi_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, QepiStatus::IoFailure);
        assert!(handle.is_null());
    }

    #[test]
    fn value_iteration_fills_buffers() {
        let handle = build(8, 8);
        let mut values = vec![0.0f64; 64];
        let mut policy = vec![u32::MAX; 64];
        let mut converged = false;
        let status = unsafe {
            qepi_value_iteration(
                handle,
                0.99,
                10_000,
                1e-10,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                &mut converged,
            )
        };
        assert_eq!(status, QepiStatus::Ok);
        assert!(converged);
        assert!(values.iter().all(|v| v.is_finite() && *v <= 0.0));
        assert!(policy.iter().all(|&a| a < 3));
        unsafe { qepi_model_free(handle) };
    }

    #[test]
    fn value_iteration_rejects_bad_gamma() {
        let handle = build(4, 4);
        let mut values = vec![0.0f64; 16];
        let status = unsafe {
            qepi_value_iteration(
                handle,
                1.5,
                100,
                1e-10,
                values.as_mut_ptr(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, QepiStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        unsafe { qepi_model_free(handle) };
    }

    #[test]
    fn default_config_round_trips_through_the_full_run() {
        let mut config = QepiRunConfig {
            gamma: 0.0,
            bits_per_value: 0,
            x_min: 0.0,
            num_anneals: 0,
            duration_steps: 0,
            seed: 0,
            max_policy_updates: 0,
            solver: QepiSolver::Remote,
            remote_url: ptr::null(),
        };
        assert_eq!(unsafe { qepi_run_config_default(&mut config) }, QepiStatus::Ok);
        assert_eq!(config.gamma, 0.99);
        assert_eq!(config.bits_per_value, 10);
        assert_eq!(config.x_min, -100.0);
        assert_eq!(config.num_anneals, 100);
        assert_eq!(config.duration_steps, 1280);
        assert_eq!(config.max_policy_updates, 10);
        assert_eq!(config.solver, QepiSolver::Simulated);

        let handle = build(4, 4);
        let mut values = vec![0.0f64; 16];
        let mut policy = vec![u32::MAX; 16];
        let mut updates = 0usize;
        let mut converged = false;
        config.bits_per_value = 1;
        config.x_min = -128.0;
        config.solver = QepiSolver::BruteForce;
        let status = unsafe {
            qepi_run(
                handle,
                &config,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                &mut updates,
                &mut converged,
            )
        };
        assert_eq!(status, QepiStatus::Ok, "{}", last_error());
        assert!(converged);
        assert!(updates >= 1 && updates <= config.max_policy_updates);
        assert!(policy.iter().all(|&a| a < 3));
        unsafe { qepi_model_free(handle) };
    }

    #[test]
    fn annealed_run_matches_library_call() {
        let handle = build(4, 4);
        let mut config = QepiRunConfig {
            gamma: 0.0,
            bits_per_value: 0,
            x_min: 0.0,
            num_anneals: 0,
            duration_steps: 0,
            seed: 0,
            max_policy_updates: 0,
            solver: QepiSolver::Simulated,
            remote_url: ptr::null(),
        };
        unsafe { qepi_run_config_default(&mut config) };
        config.num_anneals = 8;
        config.duration_steps = 64;
        config.seed = 7;

        let mut values = vec![0.0f64; 16];
        let mut policy = vec![u32::MAX; 16];
        let status = unsafe {
            qepi_run(
                handle,
                &config,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, QepiStatus::Ok, "{}", last_error());
        unsafe { qepi_model_free(handle) };

        let params = EnvParams::default();
        let grid = GridSpec::new(4, 4, &params).unwrap();
        let model = build_transition_model(&params, &grid).unwrap();
        let cfg = QepiConfig {
            anneal: AnnealParams {
                num_anneals: 8,
                duration_steps: 64,
                seed: 7,
                ..AnnealParams::default()
            },
            ..QepiConfig::default()
        };
        let (lib_policy, lib_values, _) = run_qepi(&model, &cfg).unwrap();
        assert_eq!(values, lib_values.as_slice());
        let lib_actions: Vec<u32> = lib_policy.actions().iter().map(|&a| a as u32).collect();
        assert_eq!(policy, lib_actions);
    }

    #[test]
    fn remote_without_url_is_a_null_pointer() {
        let handle = build(4, 4);
        let mut config = QepiRunConfig {
            gamma: 0.99,
            bits_per_value: 2,
            x_min: -4.0,
            num_anneals: 1,
            duration_steps: 1,
            seed: 0,
            max_policy_updates: 1,
            solver: QepiSolver::Remote,
            remote_url: ptr::null(),
        };
        let mut values = vec![0.0f64; 16];
        let mut policy = vec![0u32; 16];
        let status = unsafe {
            qepi_run(
                handle,
                &config,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, QepiStatus::NullPointer);

        let url = CString::new("http://127.0.0.1:1/solve").unwrap();
        config.remote_url = url.as_ptr();
        let status = unsafe {
            qepi_run(
                handle,
                &config,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, QepiStatus::RemoteFailure);
        assert!(!last_error().is_empty());
        unsafe { qepi_model_free(handle) };
    }

    #[test]
    fn rollout_through_the_interface_reaches_the_goal() {
        let handle = build(64, 64);
        let mut values = vec![0.0f64; 64 * 64];
        let mut policy = vec![0u32; 64 * 64];
        let status = unsafe {
            qepi_value_iteration(
                handle,
                0.99,
                10_000,
                1e-10,
                values.as_mut_ptr(),
                policy.as_mut_ptr(),
                ptr::null_mut(),
            )
        };
        assert_eq!(status, QepiStatus::Ok);

        let (mut pos, mut vel) = (-0.5f64, 0.0f64);
        let mut reached = false;
        for _ in 0..400 {
            let mut index = 0usize;
            assert_eq!(
                unsafe { qepi_model_state_index(handle, pos, vel, &mut index) },
                QepiStatus::Ok
            );
            let mut reward = 0.0f64;
            let mut terminal = false;
            let status = unsafe {
                qepi_env_step(
                    handle,
                    pos,
                    vel,
                    policy[index],
                    &mut pos,
                    &mut vel,
                    &mut reward,
                    &mut terminal,
                )
            };
            assert_eq!(status, QepiStatus::Ok);
            if terminal {
                reached = true;
                break;
            }
        }
        assert!(reached, "policy failed to reach the goal in 400 steps");
        unsafe { qepi_model_free(handle) };
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qepi.h");
        let text = std::fs::read_to_string(&header)
            .unwrap_or_else(|e| panic!("missing {}: {e}", header.display()));
        for symbol in [
            "qepi_model_build",
            "qepi_model_load",
            "qepi_model_save",
            "qepi_model_free",
            "qepi_model_num_states",
            "qepi_value_iteration",
            "qepi_run_config_default",
            "qepi_run",
            "qepi_env_step",
            "qepi_last_error",
            "QepiStatus",
            "QepiRunConfig",
        ] {
            assert!(text.contains(symbol), "header lacks {symbol}");
        }
        assert!(text.contains("typedef struct QepiModel QepiModel"), "model must stay opaque");
    }
}
