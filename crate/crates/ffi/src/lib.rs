//! C interface to the `cvqst` tomography library.
//!
//! Objects cross the boundary as opaque handles created by `cvqst_*_new` /
//! builder functions and released with the matching `cvqst_*_free`.
//! Fallible calls return a [`CvqstStatus`]; on failure a description is
//! available from [`cvqst_last_error_message`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cvqst::assemble::{build_design_matrix, build_measurement_vector, DesignMatrix, MeasurementData};
use cvqst::linalg::ComplexMatrix;
use cvqst::povm::{build_povm_set, HomodyneSettings, MeasurementSettings, PhaseSpaceGrid, PovmSet};
use cvqst::simulate::{make_test_state, TestState, TestStateSpec};
use cvqst::solver::{reconstruct, ReconstructionResult, SolverConfig};
use cvqst::{Complex64, DensityMatrix, Error, FockDim};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvqstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// How `data` passed to [`cvqst_reconstruct`] is normalized.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvqstDataKind {
    Probabilities = 0,
    /// Histogram counts; `total_samples` 0 means "sum of the counts".
    Counts = 1,
    /// Phase-space densities, multiplied by the cell area.
    Densities = 2,
    WignerValues = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvqstSolverOptions {
    pub max_iters: usize,
    pub eps_rel: f64,
    pub eps_feas: f64,
    pub eps_abs: f64,
    pub polish: bool,
}

/// Density matrix.
pub struct CvqstState(DensityMatrix);

/// Measurement operators with their settings.
pub struct CvqstPovm(PovmSet);

/// Design matrix together with the operators it was built from.
pub struct CvqstDesign {
    povms: PovmSet,
    matrix: DesignMatrix,
}

pub struct CvqstResult(ReconstructionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> CvqstStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => CvqstStatus::DimensionMismatch,
        Error::NonFinite(_) => CvqstStatus::NonFinite,
        Error::NotHermitian(_) | Error::Invariant(_) => CvqstStatus::Numerical,
        Error::Io(_) | Error::Json(_) | Error::Image(_) => CvqstStatus::Io,
        _ => CvqstStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and turning panics into a status.
fn guard(f: impl FnOnce() -> Result<(), CvqstStatus>) -> CvqstStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvqstStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CvqstStatus::Panic
        }
    }
}

fn lib<T>(r: cvqst::Result<T>) -> Result<T, CvqstStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CvqstStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        CvqstStatus::NullPointer
    })
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), CvqstStatus> {
    if out.is_null() {
        set_error("output pointer is null");
        return Err(CvqstStatus::NullPointer);
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], CvqstStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(CvqstStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn dim(n: usize) -> Result<FockDim, CvqstStatus> {
    lib(FockDim::new(n))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `cvqst_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cvqst_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvqst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn cvqst_solver_options_default() -> CvqstSolverOptions {
    let d = SolverConfig::default();
    CvqstSolverOptions {
        max_iters: d.max_iters,
        eps_rel: d.eps_rel,
        eps_feas: d.eps_feas,
        eps_abs: d.eps_abs,
        polish: d.polish,
    }
}

/// Named test state (`vac02`, `cat`, `fock04`, `squeezed`, `fock1`).
/// `param` is the cat amplitude or squeezing parameter; NaN selects the
/// default.
#[no_mangle]
pub unsafe extern "C" fn cvqst_state_new_test(
    name: *const c_char,
    param: f64,
    dim_n: usize,
    out: *mut *mut CvqstState,
) -> CvqstStatus {
    guard(|| {
        let name = deref(name, "name")?;
        let name = CStr::from_ptr(name).to_str().map_err(|_| {
            set_error("state name is not UTF-8");
            CvqstStatus::InvalidArgument
        })?;
        let p = if param.is_nan() { None } else { Some(param) };
        let state = lib(TestState::with_params(name, p, p))?;
        let rho = lib(make_test_state(&TestStateSpec { state, dim: dim(dim_n)? }))?;
        store(out, CvqstState(rho))
    })
}

/// Density matrix from row-major real and imaginary parts (`dim * dim`
/// entries each). Fails unless the matrix is Hermitian, PSD and unit trace.
#[no_mangle]
pub unsafe extern "C" fn cvqst_state_from_entries(
    dim_n: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut CvqstState,
) -> CvqstStatus {
    guard(|| {
        let n = dim(dim_n)?.get();
        let re = slice(re, n * n, "re")?;
        let im = slice(im, n * n, "im")?;
        let m = ComplexMatrix::from_fn(n, n, |i, j| Complex64::new(re[i * n + j], im[i * n + j]));
        store(out, CvqstState(lib(DensityMatrix::new(m))?))
    })
}

/// Fock dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cvqst_state_dim(state: *const CvqstState) -> usize {
    state.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies row-major entries into `re` and `im`, each of length `len >= dim * dim`.
#[no_mangle]
pub unsafe extern "C" fn cvqst_state_entries(
    state: *const CvqstState,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> CvqstStatus {
    guard(|| {
        let s = deref(state, "state")?;
        let n = s.0.dim();
        if len < n * n {
            set_error(format!("buffers hold {len} entries, need {}", n * n));
            return Err(CvqstStatus::BufferTooSmall);
        }
        if re.is_null() || im.is_null() {
            set_error("output buffer is null");
            return Err(CvqstStatus::NullPointer);
        }
        let m = s.0.entries();
        for i in 0..n {
            for j in 0..n {
                *re.add(i * n + j) = m[(i, j)].re;
                *im.add(i * n + j) = m[(i, j)].im;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_state_free(state: *mut CvqstState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Uhlmann fidelity between two states of equal dimension.
#[no_mangle]
pub unsafe extern "C" fn cvqst_fidelity(a: *const CvqstState, b: *const CvqstState, out: *mut f64) -> CvqstStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        if out.is_null() {
            set_error("output pointer is null");
            return Err(CvqstStatus::NullPointer);
        }
        *out = lib(cvqst::metrics::fidelity(&a.0, &b.0))?;
        Ok(())
    })
}

unsafe fn new_povm(
    settings: cvqst::Result<MeasurementSettings>,
    dim_n: usize,
    out: *mut *mut CvqstPovm,
) -> CvqstStatus {
    guard(|| {
        let set = lib(build_povm_set(&lib(settings)?, dim(dim_n)?))?;
        store(out, CvqstPovm(set))
    })
}

/// Heterodyne operators on a `cells x cells` grid over `[-alpha_max, alpha_max]^2`,
/// compensated for thermal noise `n_th` (0 for ideal detection).
#[no_mangle]
pub unsafe extern "C" fn cvqst_povm_heterodyne(
    cells: usize,
    alpha_max: f64,
    n_th: f64,
    dim_n: usize,
    out: *mut *mut CvqstPovm,
) -> CvqstStatus {
    let settings = PhaseSpaceGrid::square(cells, alpha_max).map(|grid| MeasurementSettings::Heterodyne { grid, n_th });
    new_povm(settings, dim_n, out)
}

/// Homodyne operators for `n_angles` phases and `n_bins` bins (two of them
/// unbounded), corrected for detector efficiency `eta`.
#[no_mangle]
pub unsafe extern "C" fn cvqst_povm_homodyne(
    n_angles: usize,
    n_bins: usize,
    x_max: f64,
    eta: f64,
    dim_n: usize,
    out: *mut *mut CvqstPovm,
) -> CvqstStatus {
    let settings = HomodyneSettings::uniform(n_angles, n_bins, x_max, eta).map(MeasurementSettings::Homodyne);
    new_povm(settings, dim_n, out)
}

/// Displaced-parity operators on a `cells x cells` grid.
#[no_mangle]
pub unsafe extern "C" fn cvqst_povm_wigner(
    cells: usize,
    alpha_max: f64,
    dim_n: usize,
    out: *mut *mut CvqstPovm,
) -> CvqstStatus {
    let settings = PhaseSpaceGrid::square(cells, alpha_max).map(|grid| MeasurementSettings::Wigner { grid });
    new_povm(settings, dim_n, out)
}

/// Number of outcomes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cvqst_povm_len(povm: *const CvqstPovm) -> usize {
    povm.as_ref().map_or(0, |p| p.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_povm_free(povm: *mut CvqstPovm) {
    if !povm.is_null() {
        drop(Box::from_raw(povm));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_design_build(povm: *const CvqstPovm, out: *mut *mut CvqstDesign) -> CvqstStatus {
    guard(|| {
        let p = deref(povm, "povm")?;
        let matrix = lib(build_design_matrix(&p.0))?;
        store(out, CvqstDesign { povms: p.0.clone(), matrix })
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_design_rows(design: *const CvqstDesign) -> usize {
    design.as_ref().map_or(0, |d| d.matrix.rows())
}

/// Outcome probabilities `A vec(rho)` written to `out` (length `len >= rows`).
#[no_mangle]
pub unsafe extern "C" fn cvqst_design_predict(
    design: *const CvqstDesign,
    state: *const CvqstState,
    out: *mut f64,
    len: usize,
) -> CvqstStatus {
    guard(|| {
        let d = deref(design, "design")?;
        let s = deref(state, "state")?;
        let p = lib(d.matrix.predict(&s.0))?;
        if len < p.len() {
            set_error(format!("buffer holds {len} values, need {}", p.len()));
            return Err(CvqstStatus::BufferTooSmall);
        }
        if out.is_null() {
            set_error("output buffer is null");
            return Err(CvqstStatus::NullPointer);
        }
        ptr::copy_nonoverlapping(p.as_ptr(), out, p.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_design_free(design: *mut CvqstDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Solves for the density matrix. `options` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn cvqst_reconstruct(
    design: *const CvqstDesign,
    data: *const f64,
    len: usize,
    kind: CvqstDataKind,
    total_samples: u64,
    options: *const CvqstSolverOptions,
    out: *mut *mut CvqstResult,
) -> CvqstStatus {
    guard(|| {
        let d = deref(design, "design")?;
        let values = slice(data, len, "data")?.to_vec();
        let data = match kind {
            CvqstDataKind::Probabilities => MeasurementData::Probabilities(values),
            CvqstDataKind::Counts => {
                MeasurementData::Counts { counts: values, total: (total_samples > 0).then_some(total_samples) }
            }
            CvqstDataKind::Densities => MeasurementData::Densities(values),
            CvqstDataKind::WignerValues => MeasurementData::WignerValues(values),
        };
        let mut config = SolverConfig::default();
        if let Some(o) = options.as_ref() {
            config.max_iters = o.max_iters;
            config.eps_rel = o.eps_rel;
            config.eps_feas = o.eps_feas;
            config.eps_abs = o.eps_abs;
            config.polish = o.polish;
        }
        let b = lib(build_measurement_vector(&data, &d.povms))?;
        let result = lib(reconstruct(&d.matrix, &b, &config))?;
        store(out, CvqstResult(result))
    })
}

/// Copy of the reconstructed state; free it with [`cvqst_state_free`].
#[no_mangle]
pub unsafe extern "C" fn cvqst_result_state(result: *const CvqstResult, out: *mut *mut CvqstState) -> CvqstStatus {
    guard(|| {
        let r = deref(result, "result")?;
        store(out, CvqstState(r.0.rho.clone()))
    })
}

/// Final objective, NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cvqst_result_objective(result: *const CvqstResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.objective)
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_result_iterations(result: *const CvqstResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.iterations)
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_result_converged(result: *const CvqstResult) -> bool {
    result.as_ref().is_some_and(|r| r.0.converged)
}

/// Solver wall time in seconds, NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cvqst_result_solve_time(result: *const CvqstResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.t_solve)
}

/// Result as JSON; free with [`cvqst_string_free`]. Null on failure.
#[no_mangle]
pub unsafe extern "C" fn cvqst_result_to_json(result: *const CvqstResult) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        let r = deref(result, "result")?;
        let json = lib(r.0.to_json())?;
        text = CString::new(json).ok();
        Ok(())
    });
    match (status, text) {
        (CvqstStatus::Ok, Some(s)) => s.into_raw(),
        _ => ptr::null_mut(),
    }
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_result_free(result: *mut CvqstResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cvqst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
