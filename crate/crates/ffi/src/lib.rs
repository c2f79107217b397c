//! C ABI for the coded QR library.
//!
//! Matrices cross the boundary as opaque [`CqrMatrix`] handles created
//! from row-major buffers; every fallible call returns a [`CqrStatus`]
//! and writes results through out-pointers. The numeric status values
//! match the CLI exit codes (2 config, 3 numeric, 4 unrecoverable
//! faults). A thread-local message for the most recent failure is
//! available through [`cqr_last_error`].

use std::cell::RefCell;
use std::ffi::CString;

use libc::{c_char, c_double, size_t};

use coded_qr::codec::{self, CodecError};
use coded_qr::costmodel;
use coded_qr::densela::{DenseMatrix, DenselaError};
use coded_qr::engine::{self, EngineError};
use coded_qr::gridsim::{FaultMode, FaultSchedule, GridConfig, GridError, Storage};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CqrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid configuration or dimensions.
    ConfigError = 2,
    /// Numerical failure (rank deficiency, singular system).
    NumericError = 3,
    /// More failures than the code tolerates.
    FaultError = 4,
}

/// Checksum storage placement.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CqrStorage {
    OutOfNode = 0,
    InNode = 1,
}

/// Fault-injection pattern applied at every iteration boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CqrInject {
    None = 0,
    ReverseDiagonal = 1,
    Random = 2,
}

/// Grid, code, and cost-model options for one run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CqrOptions {
    /// Matrix order; must be divisible by `p`.
    pub n: size_t,
    /// Grid dimension (the grid is `p x p`).
    pub p: size_t,
    /// Failure budget per grid row and column; at most `p / 2`.
    pub f: size_t,
    pub storage: CqrStorage,
    pub inject: CqrInject,
    pub seed: u64,
    pub alpha: c_double,
    pub beta: c_double,
    pub gamma: c_double,
}

/// Analytic overhead report, mirroring the cost-model closed forms.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CqrOverheads {
    pub t_qr_lower_bound: c_double,
    pub t_enc: c_double,
    pub t_post: c_double,
    pub t_recov: c_double,
    pub t_coding: c_double,
    pub ratio_coding: c_double,
}

/// Opaque dense matrix handle.
pub struct CqrMatrix(DenseMatrix);

fn grid_config(opts: &CqrOptions) -> GridConfig {
    GridConfig {
        n: opts.n,
        p_r: opts.p,
        p_c: opts.p,
        f: opts.f,
        storage: match opts.storage {
            CqrStorage::OutOfNode => Storage::OutOfNode,
            CqrStorage::InNode => Storage::InNode,
        },
        alpha: opts.alpha,
        beta: opts.beta,
        gamma: opts.gamma,
        seed: opts.seed,
    }
}

fn schedule(opts: &CqrOptions) -> FaultSchedule {
    match opts.inject {
        CqrInject::None => FaultSchedule::none(),
        CqrInject::ReverseDiagonal => FaultSchedule::reverse_diagonal(opts.p, opts.f),
        CqrInject::Random => FaultSchedule::random(opts.p, opts.f, opts.seed),
    }
}

fn status_of(err: &EngineError) -> CqrStatus {
    match err {
        EngineError::UnrecoverableFailure { .. } => CqrStatus::FaultError,
        EngineError::Grid(GridError::BadConfig(_) | GridError::BadDimensions(_))
        | EngineError::DimensionMismatch(_) => CqrStatus::ConfigError,
        EngineError::Codec(
            CodecError::BadFailureBudget { .. }
            | CodecError::BadDimensions(_)
            | CodecError::IndivisibleLoad { .. }
            | CodecError::EnumerationTooLarge { .. },
        ) => CqrStatus::ConfigError,
        _ => CqrStatus::NumericError,
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cqr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a matrix from a row-major buffer of `rows * cols` doubles.
/// Returns null if the buffer is null or contains non-finite values.
///
/// # Safety
/// `data` must point to at least `rows * cols` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn cqr_matrix_create(
    rows: size_t,
    cols: size_t,
    data: *const c_double,
) -> *mut CqrMatrix {
    if data.is_null() {
        set_error("cqr_matrix_create: null data");
        return std::ptr::null_mut();
    }
    let slice = std::slice::from_raw_parts(data, rows * cols);
    match DenseMatrix::from_vec(rows, cols, slice.to_vec()) {
        Ok(m) => Box::into_raw(Box::new(CqrMatrix(m))),
        Err(e) => {
            set_error(&format!("cqr_matrix_create: {e}"));
            std::ptr::null_mut()
        }
    }
}

/// Matrix with entries iid Unif(0,1) drawn from the seed.
#[no_mangle]
pub extern "C" fn cqr_matrix_random(rows: size_t, cols: size_t, seed: u64) -> *mut CqrMatrix {
    Box::into_raw(Box::new(CqrMatrix(DenseMatrix::random_uniform(rows, cols, seed))))
}

/// # Safety
/// `m` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn cqr_matrix_rows(m: *const CqrMatrix) -> size_t {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn cqr_matrix_cols(m: *const CqrMatrix) -> size_t {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the matrix out row-major. `len` is the capacity of `out` in
/// doubles and must be at least `rows * cols`.
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cqr_matrix_copy_data(
    m: *const CqrMatrix,
    out: *mut c_double,
    len: size_t,
) -> CqrStatus {
    let Some(m) = m.as_ref() else {
        set_error("cqr_matrix_copy_data: null matrix");
        return CqrStatus::NullArgument;
    };
    if out.is_null() {
        set_error("cqr_matrix_copy_data: null output buffer");
        return CqrStatus::NullArgument;
    }
    let needed = m.0.rows() * m.0.cols();
    if len < needed {
        set_error(&format!("cqr_matrix_copy_data: buffer holds {len}, need {needed}"));
        return CqrStatus::ConfigError;
    }
    std::ptr::copy_nonoverlapping(m.0.data().as_ptr(), out, needed);
    CqrStatus::Ok
}

/// Frees a matrix handle; null is a no-op.
///
/// # Safety
/// `m` must be a handle previously returned by this library, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cqr_matrix_free(m: *mut CqrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Solves `A x = b` through the coded pipeline under the configured fault
/// schedule. On success writes a new handle holding the `n x 1` solution
/// to `x_out` and, when non-null, the relative residual to
/// `residual_out`.
///
/// # Safety
/// `opts`, `a`, `b`, and `x_out` must be valid pointers; `a` and `b` must
/// be live handles.
#[no_mangle]
pub unsafe extern "C" fn cqr_solve(
    opts: *const CqrOptions,
    a: *const CqrMatrix,
    b: *const CqrMatrix,
    x_out: *mut *mut CqrMatrix,
    residual_out: *mut c_double,
) -> CqrStatus {
    let (Some(opts), Some(a), Some(b)) = (opts.as_ref(), a.as_ref(), b.as_ref()) else {
        set_error("cqr_solve: null argument");
        return CqrStatus::NullArgument;
    };
    if x_out.is_null() {
        set_error("cqr_solve: null x_out");
        return CqrStatus::NullArgument;
    }
    let cfg = grid_config(opts);
    match engine::solve(&cfg, &a.0, &b.0, schedule(opts), false) {
        Ok(out) => {
            *x_out = Box::into_raw(Box::new(CqrMatrix(out.x)));
            if !residual_out.is_null() {
                *residual_out = out.residual;
            }
            CqrStatus::Ok
        }
        Err(e) => {
            set_error(&format!("cqr_solve: {e}"));
            status_of(&e)
        }
    }
}

/// Coded factorization `A = Q1 R1`. Writes new handles for the retrieved
/// factors; both are `n x n`, `R1` upper triangular.
///
/// # Safety
/// `opts`, `a`, `q1_out`, and `r1_out` must be valid pointers; `a` must
/// be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cqr_factorize(
    opts: *const CqrOptions,
    a: *const CqrMatrix,
    q1_out: *mut *mut CqrMatrix,
    r1_out: *mut *mut CqrMatrix,
) -> CqrStatus {
    let (Some(opts), Some(a)) = (opts.as_ref(), a.as_ref()) else {
        set_error("cqr_factorize: null argument");
        return CqrStatus::NullArgument;
    };
    if q1_out.is_null() || r1_out.is_null() {
        set_error("cqr_factorize: null output handle");
        return CqrStatus::NullArgument;
    }
    let cfg = grid_config(opts);
    match engine::factorize(&cfg, &a.0, schedule(opts), false) {
        Ok(out) => {
            *q1_out = Box::into_raw(Box::new(CqrMatrix(out.q1)));
            *r1_out = Box::into_raw(Box::new(CqrMatrix(out.r1)));
            CqrStatus::Ok
        }
        Err(e) => {
            set_error(&format!("cqr_factorize: {e}"));
            status_of(&e)
        }
    }
}

/// Empirical MDS check of the structured Q-factor generator for one seed:
/// whether every square submatrix is full-rank, the least |det|, and the
/// largest condition number.
///
/// # Safety
/// Non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cqr_mds_check(
    p: size_t,
    f: size_t,
    seed: u64,
    is_mds_out: *mut bool,
    min_det_out: *mut c_double,
    max_cond_out: *mut c_double,
) -> CqrStatus {
    let generator = match codec::build_q_generator(p, f, seed) {
        Ok(g) => g,
        Err(e) => {
            set_error(&format!("cqr_mds_check: {e}"));
            return CqrStatus::ConfigError;
        }
    };
    match codec::check_mds(&generator.g_tilde) {
        Ok(report) => {
            if !is_mds_out.is_null() {
                *is_mds_out = report.is_mds;
            }
            if !min_det_out.is_null() {
                *min_det_out = report.min_det;
            }
            if !max_cond_out.is_null() {
                *max_cond_out = report.max_cond;
            }
            CqrStatus::Ok
        }
        Err(e) => {
            set_error(&format!("cqr_mds_check: {e}"));
            CqrStatus::ConfigError
        }
    }
}

/// The minimum number of in-node checksum blocks tolerating `f` of `p`
/// node failures with `l` data blocks.
///
/// # Safety
/// `k_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cqr_innode_min_checksums(
    l: size_t,
    p: size_t,
    f: size_t,
    k_out: *mut size_t,
) -> CqrStatus {
    match codec::innode_min_checksums(l, p, f) {
        Ok(k) => {
            if !k_out.is_null() {
                *k_out = k;
            }
            CqrStatus::Ok
        }
        Err(e) => {
            set_error(&format!("cqr_innode_min_checksums: {e}"));
            CqrStatus::ConfigError
        }
    }
}

/// Closed-form overhead report for a configuration.
///
/// # Safety
/// `opts` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cqr_analytic_overheads(
    opts: *const CqrOptions,
    out: *mut CqrOverheads,
) -> CqrStatus {
    let (Some(opts), Some(out)) = (opts.as_ref(), out.as_mut()) else {
        set_error("cqr_analytic_overheads: null argument");
        return CqrStatus::NullArgument;
    };
    let cfg = grid_config(opts);
    if let Err(e) = cfg.validate() {
        set_error(&format!("cqr_analytic_overheads: {e}"));
        return CqrStatus::ConfigError;
    }
    let report = costmodel::analytic_overheads(&cfg);
    *out = CqrOverheads {
        t_qr_lower_bound: report.t_qr_lb,
        t_enc: report.t_enc,
        t_post: report.t_post,
        t_recov: report.t_recov,
        t_coding: report.t_coding,
        ratio_coding: report.ratio_coding,
    };
    CqrStatus::Ok
}

// keep the dead-code lint honest about the wrapper's only field
impl CqrMatrix {
    fn _used(&self) -> &DenseMatrix {
        &self.0
    }
}

#[allow(unused_imports)]
use DenselaError as _;

#[cfg(test)]
mod tests {
    use super::*;

    fn default_opts(n: usize, p: usize, f: usize) -> CqrOptions {
        CqrOptions {
            n,
            p,
            f,
            storage: CqrStorage::OutOfNode,
            inject: CqrInject::None,
            seed: 3,
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.01,
        }
    }

    #[test]
    fn create_copy_roundtrip() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        unsafe {
            let m = cqr_matrix_create(2, 3, data.as_ptr());
            assert!(!m.is_null());
            assert_eq!(cqr_matrix_rows(m), 2);
            assert_eq!(cqr_matrix_cols(m), 3);
            let mut out = [0.0; 6];
            assert_eq!(cqr_matrix_copy_data(m, out.as_mut_ptr(), 6), CqrStatus::Ok);
            assert_eq!(out, data);
            cqr_matrix_free(m);
        }
    }

    #[test]
    fn create_rejects_non_finite_and_null() {
        let bad = [1.0, f64::INFINITY];
        unsafe {
            assert!(cqr_matrix_create(1, 2, bad.as_ptr()).is_null());
            assert!(cqr_matrix_create(1, 2, std::ptr::null()).is_null());
            let msg = std::ffi::CStr::from_ptr(cqr_last_error());
            assert!(!msg.to_bytes().is_empty());
        }
    }

    #[test]
    fn solve_under_faults_via_ffi() {
        let mut opts = default_opts(32, 4, 2);
        opts.inject = CqrInject::ReverseDiagonal;
        unsafe {
            let a = cqr_matrix_random(32, 32, 10);
            let b = cqr_matrix_random(32, 1, 11);
            let mut x: *mut CqrMatrix = std::ptr::null_mut();
            let mut residual = f64::NAN;
            let status = cqr_solve(&opts, a, b, &mut x, &mut residual);
            assert_eq!(status, CqrStatus::Ok);
            assert!(residual <= 1e-8, "residual {residual:e}");
            assert_eq!(cqr_matrix_rows(x), 32);
            assert_eq!(cqr_matrix_cols(x), 1);
            cqr_matrix_free(x);
            cqr_matrix_free(a);
            cqr_matrix_free(b);
        }
    }

    #[test]
    fn factorize_returns_triangular_r() {
        let opts = default_opts(16, 4, 1);
        unsafe {
            let a = cqr_matrix_random(16, 16, 12);
            let mut q: *mut CqrMatrix = std::ptr::null_mut();
            let mut r: *mut CqrMatrix = std::ptr::null_mut();
            assert_eq!(cqr_factorize(&opts, a, &mut q, &mut r), CqrStatus::Ok);
            let mut buf = vec![0.0; 256];
            assert_eq!(cqr_matrix_copy_data(r, buf.as_mut_ptr(), 256), CqrStatus::Ok);
            for i in 0..16 {
                for j in 0..i {
                    assert_eq!(buf[i * 16 + j], 0.0);
                }
            }
            cqr_matrix_free(q);
            cqr_matrix_free(r);
            cqr_matrix_free(a);
        }
    }

    #[test]
    fn config_errors_surface_as_status() {
        // f too large for the grid
        let opts = default_opts(16, 4, 3);
        unsafe {
            let a = cqr_matrix_random(16, 16, 1);
            let b = cqr_matrix_random(16, 1, 2);
            let mut x: *mut CqrMatrix = std::ptr::null_mut();
            let status = cqr_solve(&opts, a, b, &mut x, std::ptr::null_mut());
            assert_eq!(status, CqrStatus::ConfigError);
            let msg = std::ffi::CStr::from_ptr(cqr_last_error()).to_string_lossy().to_string();
            assert!(msg.contains("failure budget"), "{msg}");
            cqr_matrix_free(a);
            cqr_matrix_free(b);
        }
    }

    #[test]
    fn null_arguments_reported() {
        unsafe {
            let mut x: *mut CqrMatrix = std::ptr::null_mut();
            assert_eq!(
                cqr_solve(std::ptr::null(), std::ptr::null(), std::ptr::null(), &mut x, std::ptr::null_mut()),
                CqrStatus::NullArgument
            );
        }
    }

    #[test]
    fn mds_and_bounds_exposed() {
        unsafe {
            let mut is_mds = false;
            let mut min_det = 0.0;
            let mut max_cond = 0.0;
            assert_eq!(
                cqr_mds_check(8, 2, 42, &mut is_mds, &mut min_det, &mut max_cond),
                CqrStatus::Ok
            );
            assert!(is_mds);
            assert!(min_det > 0.0 && max_cond >= 1.0);

            let mut k = 0usize;
            assert_eq!(cqr_innode_min_checksums(4, 4, 1, &mut k), CqrStatus::Ok);
            assert_eq!(k, 2);
            assert_eq!(
                cqr_innode_min_checksums(10, 4, 1, &mut k),
                CqrStatus::ConfigError
            );
        }
    }

    #[test]
    fn overheads_match_core_costmodel() {
        let opts = default_opts(256, 4, 2);
        unsafe {
            let mut out = CqrOverheads {
                t_qr_lower_bound: 0.0,
                t_enc: 0.0,
                t_post: 0.0,
                t_recov: 0.0,
                t_coding: 0.0,
                ratio_coding: 0.0,
            };
            assert_eq!(cqr_analytic_overheads(&opts, &mut out), CqrStatus::Ok);
            let report = costmodel::analytic_overheads(&grid_config(&opts));
            assert_eq!(out.t_enc, report.t_enc);
            assert_eq!(out.ratio_coding, report.ratio_coding);
        }
    }
}
