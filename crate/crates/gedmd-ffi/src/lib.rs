//! C ABI over the gedmd estimation library.
//!
//! Conventions:
//! - Systems and dictionaries are opaque handles created and freed here;
//!   passing a handle to the wrong `_free` (or using one after free) is
//!   undefined behavior, as usual for C APIs.
//! - Fallible calls return a [`GedmdStatus`]; anything nonzero left a
//!   thread-local message retrievable with [`gedmd_last_error`].
//! - Matrix output is written into caller-provided buffers, row-major. The
//!   estimated operator matrix acts on coefficient *columns*.
//! - Panics never unwind across the boundary; they come back as
//!   [`GedmdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use gedmd::bounds::{oc_schedule, projection_error_certificate, OperatorConstants};
use gedmd::dictionary::{self, Dictionary, MeshSpec, OperatorKind};
use gedmd::error::Error;
use gedmd::estimator::{
    reference_matrices, solve_estimator, AssemblyOptions, EstimationResult, IbpMode,
    ReferenceMethod,
};
use gedmd::noise::{perturbed_matrices_sampled, NoiseModel};
use gedmd::rng::{mix, purpose};
use gedmd::spectral::{matrix_eigensystem, Normalization};
use gedmd::systems::{
    builtin_double_well, builtin_ode, builtin_ou, DynamicalSystem, SamplingMeasure,
};

/// Status of a fallible call. Zero is success; everything else corresponds
/// to one failure class of the underlying library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GedmdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Unsupported = 2,
    Validity = 3,
    Numerical = 4,
    NonFinite = 5,
    Config = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

fn status_of(e: &Error) -> GedmdStatus {
    match e {
        Error::InvalidArgument(_) => GedmdStatus::InvalidArgument,
        Error::Unsupported(_) => GedmdStatus::Unsupported,
        Error::Validity(_) => GedmdStatus::Validity,
        Error::Numerical(_) => GedmdStatus::Numerical,
        Error::NonFinite(_) => GedmdStatus::NonFinite,
        Error::Config(_) => GedmdStatus::Config,
        Error::Io(_) => GedmdStatus::Io,
        Error::Csv(_) => GedmdStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let cleaned: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    let msg = CString::new(cleaned).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(e: &Error) -> GedmdStatus {
    set_error(&e.to_string());
    status_of(e)
}

fn fail_null() -> GedmdStatus {
    set_error("null pointer argument");
    GedmdStatus::NullPointer
}

/// Run a fallible body with panic containment.
fn guarded<F: FnOnce() -> GedmdStatus>(body: F) -> GedmdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            GedmdStatus::Panic
        }
    }
}

/// Copy the message of the most recent failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full length the
/// message needs including the NUL, or 0 when there is no pending error.
/// Call with `cap = 0` to query the size.
#[no_mangle]
pub unsafe extern "C" fn gedmd_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            // Guarantee termination even when truncating.
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

// ---------------------------------------------------------------------------
// opaque handles
// ---------------------------------------------------------------------------

/// One of the built-in benchmark systems (opaque).
pub struct GedmdSystem {
    inner: DynamicalSystem,
}

/// A basis family over a system's state space (opaque).
pub struct GedmdDictionary {
    inner: Dictionary,
}

/// 1D Ornstein-Uhlenbeck process on [-2, 2].
#[no_mangle]
pub extern "C" fn gedmd_system_ou() -> *mut GedmdSystem {
    clear_error();
    Box::into_raw(Box::new(GedmdSystem { inner: builtin_ou() }))
}

/// 2D polynomial ODE benchmark on [-2, 2] x [-1, 1] (deterministic).
#[no_mangle]
pub extern "C" fn gedmd_system_ode1() -> *mut GedmdSystem {
    clear_error();
    Box::into_raw(Box::new(GedmdSystem {
        inner: builtin_ode(),
    }))
}

/// 2D double-well diffusion on [-2, 2] x [-1, 1].
#[no_mangle]
pub extern "C" fn gedmd_system_double_well() -> *mut GedmdSystem {
    clear_error();
    Box::into_raw(Box::new(GedmdSystem {
        inner: builtin_double_well(),
    }))
}

/// State dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gedmd_system_dim(sys: *const GedmdSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.dim)
}

#[no_mangle]
pub unsafe extern "C" fn gedmd_system_free(sys: *mut GedmdSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Monomials of total degree <= `degree` in `dim` variables.
#[no_mangle]
pub extern "C" fn gedmd_dictionary_monomials(dim: usize, degree: usize) -> *mut GedmdDictionary {
    clear_error();
    if dim == 0 {
        set_error("dimension must be at least 1");
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(GedmdDictionary {
        inner: dictionary::monomials(dim, degree),
    }))
}

/// Gaussian bumps of bandwidth `theta` at `n` centers, passed row-major as
/// `n * dim` doubles. Null on error (duplicate centers, bad bandwidth).
#[no_mangle]
pub unsafe extern "C" fn gedmd_dictionary_gaussians(
    centers: *const f64,
    n: usize,
    dim: usize,
    theta: f64,
) -> *mut GedmdDictionary {
    clear_error();
    if centers.is_null() {
        fail_null();
        return std::ptr::null_mut();
    }
    if n == 0 || dim == 0 {
        set_error("need at least one center and one dimension");
        return std::ptr::null_mut();
    }
    let flat = std::slice::from_raw_parts(centers, n * dim);
    let centers: Vec<Vec<f64>> = flat.chunks_exact(dim).map(<[f64]>::to_vec).collect();
    match dictionary::gaussians(centers, theta) {
        Ok(dict) => Box::into_raw(Box::new(GedmdDictionary { inner: dict })),
        Err(e) => {
            fail(&e);
            std::ptr::null_mut()
        }
    }
}

/// Piecewise-linear hat functions on a uniform mesh over the system's
/// domain, with `interior_per_axis[i]` interior vertices along axis `i`
/// (`len` must equal the state dimension). Null on error.
#[no_mangle]
pub unsafe extern "C" fn gedmd_dictionary_fem(
    sys: *const GedmdSystem,
    interior_per_axis: *const usize,
    len: usize,
) -> *mut GedmdDictionary {
    clear_error();
    let Some(sys) = sys.as_ref() else {
        fail_null();
        return std::ptr::null_mut();
    };
    if interior_per_axis.is_null() {
        fail_null();
        return std::ptr::null_mut();
    }
    let counts = std::slice::from_raw_parts(interior_per_axis, len).to_vec();
    match MeshSpec::new(&sys.inner.domain, counts) {
        Ok(mesh) => Box::into_raw(Box::new(GedmdDictionary {
            inner: dictionary::fem_linear(mesh),
        })),
        Err(e) => {
            fail(&e);
            std::ptr::null_mut()
        }
    }
}

/// Number of basis functions, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn gedmd_dictionary_len(dict: *const GedmdDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn gedmd_dictionary_free(dict: *mut GedmdDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

// ---------------------------------------------------------------------------
// operators and estimation
// ---------------------------------------------------------------------------

/// Which operator the data rows sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GedmdOperatorKind {
    KoopmanGenerator = 0,
    PfGenerator = 1,
    KoopmanT = 2,
}

/// Operator selector. `t`, `h` and `n_realizations` only apply to the
/// finite-time kind; `h <= 0` and `n_realizations == 0` fall back to the
/// defaults (1e-3 and 1).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GedmdOperatorSpec {
    pub kind: GedmdOperatorKind,
    pub t: f64,
    pub h: f64,
    pub n_realizations: usize,
}

impl GedmdOperatorSpec {
    fn to_kind(self) -> Result<OperatorKind, Error> {
        match self.kind {
            GedmdOperatorKind::KoopmanGenerator => Ok(OperatorKind::KoopmanGenerator),
            GedmdOperatorKind::PfGenerator => Ok(OperatorKind::PfGenerator),
            GedmdOperatorKind::KoopmanT => {
                if !(self.t >= 0.0) || !self.t.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "finite-time operator needs t >= 0, got {}",
                        self.t
                    )));
                }
                Ok(OperatorKind::KoopmanT {
                    t: self.t,
                    h: if self.h > 0.0 { self.h } else { 1e-3 },
                    n_realizations: self.n_realizations.max(1),
                })
            }
        }
    }
}

fn estimate_inner(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    spec: GedmdOperatorSpec,
    m: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<EstimationResult, Error> {
    let op = spec.to_kind()?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and nonnegative, got {noise_sigma}"
        )));
    }
    let model = if noise_sigma == 0.0 {
        NoiseModel::None
    } else {
        NoiseModel::gaussian(noise_sigma)
    };
    let measure = SamplingMeasure::uniform(&sys.domain);
    let opts = AssemblyOptions {
        koopman_seed: mix(seed, &[0, 0, 2]),
        ..AssemblyOptions::default()
    };
    let gp = perturbed_matrices_sampled(
        dict,
        sys,
        op,
        &measure,
        m,
        mix(seed, &[0, 0, 0]),
        &model,
        mix(seed, &[0, 0, 1]),
        &opts,
    )?;
    Ok(solve_estimator(gp, None))
}

/// Estimate the operator matrix from `m` uniform samples and write it into
/// `a_out` (row-major, `a_len` must equal N*N for N basis functions).
/// Optional evaluation noise of level `noise_sigma` is applied to every
/// scalar evaluation. `rank_out` (nullable) receives the numerical rank of
/// the empirical Gram matrix.
#[no_mangle]
pub unsafe extern "C" fn gedmd_estimate(
    dict: *const GedmdDictionary,
    sys: *const GedmdSystem,
    op: *const GedmdOperatorSpec,
    m: usize,
    seed: u64,
    noise_sigma: f64,
    a_out: *mut f64,
    a_len: usize,
    rank_out: *mut usize,
) -> GedmdStatus {
    guarded(|| {
        clear_error();
        let (Some(dict), Some(sys), Some(op)) = (dict.as_ref(), sys.as_ref(), op.as_ref()) else {
            return fail_null();
        };
        if a_out.is_null() {
            return fail_null();
        }
        let n = dict.inner.len();
        if a_len != n * n {
            return fail(&Error::InvalidArgument(format!(
                "output buffer holds {a_len} doubles but the matrix needs {}",
                n * n
            )));
        }
        match estimate_inner(&dict.inner, &sys.inner, *op, m, seed, noise_sigma) {
            Ok(est) => {
                let out = std::slice::from_raw_parts_mut(a_out, a_len);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = est.a[(i, j)];
                    }
                }
                if !rank_out.is_null() {
                    *rank_out = est.rank;
                }
                GedmdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Estimate the operator and return its spectrum: eigenvalues (descending
/// real part) with Gram-weighted residuals. All three buffers must hold N
/// doubles (`len == N`).
#[no_mangle]
pub unsafe extern "C" fn gedmd_spectrum(
    dict: *const GedmdDictionary,
    sys: *const GedmdSystem,
    op: *const GedmdOperatorSpec,
    m: usize,
    seed: u64,
    re_out: *mut f64,
    im_out: *mut f64,
    residual_out: *mut f64,
    len: usize,
) -> GedmdStatus {
    guarded(|| {
        clear_error();
        let (Some(dict), Some(sys), Some(op)) = (dict.as_ref(), sys.as_ref(), op.as_ref()) else {
            return fail_null();
        };
        if re_out.is_null() || im_out.is_null() || residual_out.is_null() {
            return fail_null();
        }
        let n = dict.inner.len();
        if len != n {
            return fail(&Error::InvalidArgument(format!(
                "spectrum buffers hold {len} entries but the basis has {n}"
            )));
        }
        let run = || -> Result<(), Error> {
            let est = estimate_inner(&dict.inner, &sys.inner, *op, m, seed, 0.0)?;
            let pairs = matrix_eigensystem(&est.a, &est.gram.g, None, Normalization::L2)?;
            let re = std::slice::from_raw_parts_mut(re_out, len);
            let im = std::slice::from_raw_parts_mut(im_out, len);
            let res = std::slice::from_raw_parts_mut(residual_out, len);
            for (i, pair) in pairs.iter().enumerate() {
                re[i] = pair.lambda.re;
                im[i] = pair.lambda.im;
                res[i] = pair.residual;
            }
            Ok(())
        };
        match run() {
            Ok(()) => GedmdStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

/// The constants a sample-size certificate is stated in terms of: reference
/// matrix norms and the sup-bound `gamma` on the squared evaluation norms.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GedmdConstants {
    pub n: usize,
    pub norm_g: f64,
    pub norm_g_inv: f64,
    pub norm_c: f64,
    pub norm_t: f64,
    pub gamma: f64,
}

impl GedmdConstants {
    fn to_inner(self) -> OperatorConstants {
        OperatorConstants {
            n: self.n,
            norm_g: self.norm_g,
            norm_g_inv: self.norm_g_inv,
            norm_c: self.norm_c,
            norm_t: self.norm_t,
            gamma: self.gamma,
        }
    }
}

/// Compute certificate constants from a Monte Carlo reference of `m_ref`
/// samples: reference norms plus the exact sup-bound over the domain.
#[no_mangle]
pub unsafe extern "C" fn gedmd_operator_constants(
    dict: *const GedmdDictionary,
    sys: *const GedmdSystem,
    op: *const GedmdOperatorSpec,
    m_ref: usize,
    seed: u64,
    out: *mut GedmdConstants,
) -> GedmdStatus {
    guarded(|| {
        clear_error();
        let (Some(dict), Some(sys), Some(op)) = (dict.as_ref(), sys.as_ref(), op.as_ref()) else {
            return fail_null();
        };
        if out.is_null() {
            return fail_null();
        }
        let run = || -> Result<GedmdConstants, Error> {
            let kind = op.to_kind()?;
            let measure = SamplingMeasure::uniform(&sys.inner.domain);
            let method = ReferenceMethod::MonteCarlo {
                m_ref,
                seed: mix(seed, &[purpose::REFERENCE]),
            };
            let refm = reference_matrices(
                &dict.inner,
                &sys.inner,
                kind,
                &measure,
                IbpMode::Off,
                &method,
            )?;
            let gamma = dict
                .inner
                .gamma_identity(&sys.inner.domain)
                .max(dict.inner.gamma_operator(&sys.inner, kind, true)?);
            let consts = OperatorConstants::from_reference(&refm, gamma)?;
            Ok(GedmdConstants {
                n: consts.n,
                norm_g: consts.norm_g,
                norm_g_inv: consts.norm_g_inv,
                norm_c: consts.norm_c,
                norm_t: consts.norm_t,
                gamma: consts.gamma,
            })
        };
        match run() {
            Ok(consts) => {
                *out = consts;
                GedmdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Samples sufficient for the estimate to sit within the returned
/// operator-norm radius of the projected operator with probability `p`,
/// stated at matrix deviation `delta`. Fails with the validity status
/// outside the certificate's deviation window.
#[no_mangle]
pub unsafe extern "C" fn gedmd_projection_certificate(
    consts: *const GedmdConstants,
    delta: f64,
    p: f64,
    m_out: *mut u64,
    radius_out: *mut f64,
) -> GedmdStatus {
    guarded(|| {
        clear_error();
        let Some(consts) = consts.as_ref() else {
            return fail_null();
        };
        if m_out.is_null() || radius_out.is_null() {
            return fail_null();
        }
        match projection_error_certificate(&consts.to_inner(), delta, p) {
            Ok(report) => {
                *m_out = report.required_m;
                *radius_out = report.radius;
                GedmdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Samples sufficient for operator-norm error at most `epsilon` with
/// probability `p`; also reports the matrix deviation the schedule is
/// stated at.
#[no_mangle]
pub unsafe extern "C" fn gedmd_sample_schedule(
    consts: *const GedmdConstants,
    epsilon: f64,
    p: f64,
    m_out: *mut u64,
    delta_out: *mut f64,
) -> GedmdStatus {
    guarded(|| {
        clear_error();
        let Some(consts) = consts.as_ref() else {
            return fail_null();
        };
        if m_out.is_null() || delta_out.is_null() {
            return fail_null();
        }
        match oc_schedule(&consts.to_inner(), epsilon, p) {
            Ok(report) => {
                *m_out = report.required_m;
                *delta_out = report.delta;
                GedmdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
