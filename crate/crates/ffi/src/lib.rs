//! C ABI over the tensorcast core.
//!
//! Every fallible function returns a [`TcStatus`]. On failure the message is
//! kept per thread and can be read with [`tc_last_error_message`] until the
//! next failing call on that thread. Objects cross the boundary as opaque
//! handles and are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tensorcast::calibration::{self, CalibrationConfig, ModelParams};
use tensorcast::stochastic::{self, SimConfig};
use tensorcast::{cp, payoff, Error, ErrorKind, FactorSet, SolverConfig, Tensor3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    /// Bad configuration value (rank 0, negative epsilon, ...).
    Config = 2,
    /// Bad input data (shape mismatch, negative entries, short series).
    Data = 3,
    /// Calibration or numerical failure.
    Numerical = 4,
    /// A required pointer was null.
    NullPointer = 5,
    /// Internal panic; the library state is unchanged.
    Panic = 6,
}

/// Dense non-negative 3-way tensor, first index fastest.
pub struct TcTensor(Tensor3);

/// Non-negative CP factors `A`, `B`, `C`.
pub struct TcFactors(FactorSet);

/// Model parameters of the coupled activity/drift system.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcModelParams {
    pub sigma_s: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub sigma_mu: f64,
    pub rho: f64,
    pub s0: f64,
    pub mu0: f64,
}

impl From<ModelParams> for TcModelParams {
    fn from(p: ModelParams) -> Self {
        Self {
            sigma_s: p.sigma_s,
            lambda: p.lambda,
            kappa: p.kappa,
            sigma_mu: p.sigma_mu,
            rho: p.rho,
            s0: p.s0,
            mu0: p.mu0,
        }
    }
}

impl From<TcModelParams> for ModelParams {
    fn from(p: TcModelParams) -> Self {
        Self {
            sigma_s: p.sigma_s,
            lambda: p.lambda,
            kappa: p.kappa,
            sigma_mu: p.sigma_mu,
            rho: p.rho,
            s0: p.s0,
            mu0: p.mu0,
        }
    }
}

/// Solver settings; `epsilon = 0` runs exactly `max_iters` sweeps.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TcSolverConfig {
    pub rank: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
}

/// Summary of a decomposition run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TcFitSummary {
    pub iterations: usize,
    pub converged: bool,
    pub relative_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TcStatus {
    match e.kind() {
        ErrorKind::Config => TcStatus::Config,
        ErrorKind::Data => TcStatus::Data,
        ErrorKind::Numerical => TcStatus::Numerical,
    }
}

struct Fail(TcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(TcStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TcStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            TcStatus::Panic
        }
    }
}

unsafe fn slice<'a>(data: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Solver defaults (rank 5, epsilon 1e-3, 1000 sweeps, seed 0).
#[no_mangle]
pub extern "C" fn tc_solver_config_default() -> TcSolverConfig {
    let d = SolverConfig::default();
    TcSolverConfig {
        rank: d.rank,
        epsilon: d.epsilon,
        max_iters: d.max_iters,
        seed: d.seed,
    }
}

/// Copy `data` (length `i*j*k`, first index fastest) into a new tensor.
///
/// # Safety
/// `data` must point to `i*j*k` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_tensor_new(
    i: usize,
    j: usize,
    k: usize,
    data: *const f64,
    len: usize,
    out_tensor: *mut *mut TcTensor,
) -> TcStatus {
    guard(|| {
        let out_tensor = out(out_tensor, "out_tensor")?;
        let values = slice(data, len, "data")?.to_vec();
        let t = Tensor3::new([i, j, k], values)?;
        *out_tensor = Box::into_raw(Box::new(TcTensor(t)));
        Ok(())
    })
}

/// # Safety
/// `tensor` must come from [`tc_tensor_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tc_tensor_free(tensor: *mut TcTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Non-negative CP decomposition. `summary` may be null.
///
/// # Safety
/// `tensor` must be a live handle; `out_factors` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_decompose(
    tensor: *const TcTensor,
    config: TcSolverConfig,
    out_factors: *mut *mut TcFactors,
    summary: *mut TcFitSummary,
) -> TcStatus {
    guard(|| {
        let tensor = tensor.as_ref().ok_or_else(|| null("tensor"))?;
        let out_factors = out(out_factors, "out_factors")?;
        let cfg = SolverConfig {
            rank: config.rank,
            epsilon: config.epsilon,
            max_iters: config.max_iters,
            seed: config.seed,
            ..SolverConfig::default()
        };
        let (factors, trace) = cp::nncp_decompose(&tensor.0, &cfg)?;
        if let Some(s) = summary.as_mut() {
            *s = TcFitSummary {
                iterations: trace.iterations,
                converged: trace.converged,
                relative_error: trace.final_relative_error,
            };
        }
        *out_factors = Box::into_raw(Box::new(TcFactors(factors)));
        Ok(())
    })
}

/// # Safety
/// `factors` must come from [`tc_decompose`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tc_factors_free(factors: *mut TcFactors) {
    if !factors.is_null() {
        drop(Box::from_raw(factors));
    }
}

/// Rank and the tensor dimensions the factors were fitted to.
///
/// # Safety
/// `factors` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_factors_shape(
    factors: *const TcFactors,
    out_rank: *mut usize,
    out_dims: *mut usize,
) -> TcStatus {
    guard(|| {
        let f = factors.as_ref().ok_or_else(|| null("factors"))?;
        *out(out_rank, "out_rank")? = f.0.rank();
        if out_dims.is_null() {
            return Err(null("out_dims"));
        }
        std::slice::from_raw_parts_mut(out_dims, 3).copy_from_slice(&f.0.dims());
        Ok(())
    })
}

/// Copy column `rank` (1-based) of the time factor `C` into `buf`, which
/// must hold at least `K` values.
///
/// # Safety
/// `factors` must be a live handle; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_factors_time_factor(
    factors: *const TcFactors,
    rank: usize,
    buf: *mut f64,
    len: usize,
) -> TcStatus {
    guard(|| {
        let f = factors.as_ref().ok_or_else(|| null("factors"))?;
        let column = f.0.time_factor(rank)?;
        if len < column.len() {
            return Err(Fail(
                TcStatus::Data,
                format!("buffer holds {len} values, time factor has {}", column.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, column.len()).copy_from_slice(&column);
        Ok(())
    })
}

/// Calibrate the model on a time factor and a slot-aligned rate series of
/// equal length, with default calibration settings and slot length `dt`.
///
/// # Safety
/// The inputs must point to `len` readable doubles; `out_params` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_calibrate(
    time_factor: *const f64,
    rates: *const f64,
    len: usize,
    dt: f64,
    out_params: *mut TcModelParams,
) -> TcStatus {
    guard(|| {
        let out_params = out(out_params, "out_params")?;
        let cfg = CalibrationConfig {
            dt,
            ..CalibrationConfig::default()
        };
        cfg.validate()?;
        let p = calibration::calibrate_all(
            slice(time_factor, len, "time_factor")?,
            slice(rates, len, "rates")?,
            &cfg,
        )?;
        *out_params = p.into();
        Ok(())
    })
}

/// Simulate the coupled system for `n_steps` steps of length `dt` and write
/// the terminal activity of each path to `terminals` (length `n_paths`).
/// `out_absorbed` may be null.
///
/// # Safety
/// `terminals` must have room for `n_paths` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_simulate(
    params: TcModelParams,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    terminals: *mut f64,
    out_absorbed: *mut usize,
) -> TcStatus {
    guard(|| {
        if terminals.is_null() {
            return Err(null("terminals"));
        }
        let cfg = SimConfig {
            n_paths,
            n_steps,
            dt,
            seed,
            ..SimConfig::default()
        };
        let bundle = stochastic::simulate_coupled(&params.into(), &cfg)?;
        std::slice::from_raw_parts_mut(terminals, n_paths).copy_from_slice(&bundle.terminals);
        if let Some(a) = out_absorbed.as_mut() {
            *a = bundle.absorbed;
        }
        Ok(())
    })
}

/// Fraction of terminal values at or above `strike`, with its standard error.
/// `out_std_err` may be null.
///
/// # Safety
/// `terminals` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_digital_value(
    terminals: *const f64,
    len: usize,
    strike: f64,
    out_value: *mut f64,
    out_std_err: *mut f64,
) -> TcStatus {
    guard(|| {
        let out_value = out(out_value, "out_value")?;
        let (p, se) = payoff::digital_value(slice(terminals, len, "terminals")?, strike)?;
        *out_value = p;
        if let Some(s) = out_std_err.as_mut() {
            *s = se;
        }
        Ok(())
    })
}
