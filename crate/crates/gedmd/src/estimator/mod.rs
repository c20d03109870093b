//! Empirical matrix assembly, the pseudoinverse solve, and the error
//! functionals built on top of them.
//!
//! The estimator consumes per-sample rows `Psi(x_m)` and `A Psi(x_m)` and
//! forms
//!
//! ```text
//!     G = (1/M) sum_m Psi(x_m) Psi(x_m)^T        (Gram)
//!     C[i][j] = (1/M) sum_m A psi_i(x_m) psi_j(x_m)   (structure)
//! ```
//!
//! then solves `A_hat^T = C G^+`. The Perron-Frobenius route pairs the same
//! generator rows on the other slot (`C[i][j] = mean psi_i * L psi_j`),
//! which is the adjoint relation at matrix level and avoids ever needing
//! pointwise adjoint data.
//!
//! Assembly is blocked (8192 samples per block, matching the sampler's
//! stream layout) and reduced in fixed block order, so results are
//! bit-identical for any thread count and whether points were materialized
//! up front or generated block-by-block.
//!
//! For diffusive systems and dictionaries without second derivatives, the
//! structure matrix can be assembled in weak form from gradients alone
//! (`IbpMode`); see `AssemblyOptions`.

mod quadrature;
mod reference;

pub use quadrature::{tensor_gauss_legendre, TensorQuadrature};
pub use reference::{
    galerkin_matrix, reference_matrices, Provenance, ReferenceMatrices, ReferenceMethod,
};

use std::borrow::Cow;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dictionary::{Dictionary, OperatorEvaluator, OperatorKind};
use crate::error::{Error, Result};
use crate::linalg::{psd_pinv, spd_condition, spd_sqrt_pair, spectral_norm};
use crate::rng::{purpose, stream};
use crate::systems::{sample_block, DynamicalSystem, PointSet, SamplingMeasure, SAMPLE_BLOCK};

/// How the structure matrix is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IbpMode {
    /// Pointwise operator rows (needs basis Hessians on diffusive systems).
    Off,
    /// Pure weak form: `C[i][j] = -1/2 mean (Sigma grad psi_i) . grad psi_j`.
    /// Symmetric; drops the drift entirely. Gradients only.
    Dirichlet,
    /// Weak form for the second-order part only, drift kept pointwise:
    /// `C[i][j] = mean [ (b.grad psi_i) psi_j - 1/2 (grad psi_i)^T Sigma grad psi_j
    ///                   - 1/2 psi_j (div Sigma).grad psi_i ]`.
    DriftCorrected,
}

/// Assembly controls. `koopman_seed` feeds the per-sample Wiener streams of
/// stochastic finite-time data and is ignored by generator rows.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    pub ibp: IbpMode,
    /// Also accumulate `T_hat = (1/M) sum A Psi A Psi^T` (pointwise rows only).
    pub want_t: bool,
    pub koopman_seed: u64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            ibp: IbpMode::Off,
            want_t: false,
            koopman_seed: 0,
        }
    }
}

/// Empirical Gram/structure pair.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Empirical `<A psi_i, A psi_j>` when requested and defined.
    pub t_hat: Option<DMatrix<f64>>,
    pub m: usize,
    pub operator: OperatorKind,
    pub ibp: IbpMode,
}

/// Per-sample evaluation perturbation: receives the global sample index,
/// the basis row, and the operator row (empty in weak-form modes). Used by
/// the noise model; `None` leaves evaluations untouched.
pub(crate) type EvalHook<'h> = &'h (dyn Fn(usize, &mut [f64], &mut [f64]) + Sync);

enum Source<'s> {
    Points(&'s PointSet),
    Sampled {
        measure: &'s SamplingMeasure,
        m: usize,
        seed: u64,
    },
}

impl Source<'_> {
    fn m(&self) -> usize {
        match self {
            Source::Points(p) => p.len(),
            Source::Sampled { m, .. } => *m,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Source::Points(p) => p.dim,
            Source::Sampled { measure, .. } => measure.dim(),
        }
    }

    fn block(&self, b: usize) -> Cow<'_, [f64]> {
        match self {
            Source::Points(p) => {
                let d = p.dim;
                let start = b * SAMPLE_BLOCK;
                let end = (start + SAMPLE_BLOCK).min(p.len());
                Cow::Borrowed(&p.as_slice()[start * d..end * d])
            }
            Source::Sampled { measure, m, seed } => {
                Cow::Owned(sample_block(measure, *m, *seed, b).into_flat())
            }
        }
    }
}

/// Empirical matrices over explicit points.
pub fn empirical_matrices(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    points: &PointSet,
    opts: &AssemblyOptions,
) -> Result<GramPair> {
    assemble(dict, sys, op, opts, &Source::Points(points), None)
}

/// Empirical matrices with points generated block-by-block from the
/// measure — bit-identical to sampling the full set first, without the
/// allocation. Seeds feed the same per-block stream layout as
/// `sample_points`.
pub fn empirical_matrices_sampled(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    m: usize,
    seed: u64,
    opts: &AssemblyOptions,
) -> Result<GramPair> {
    assemble(
        dict,
        sys,
        op,
        opts,
        &Source::Sampled { measure, m, seed },
        None,
    )
}

pub(crate) fn empirical_matrices_hooked(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    points: &PointSet,
    opts: &AssemblyOptions,
    hook: EvalHook<'_>,
) -> Result<GramPair> {
    assemble(dict, sys, op, opts, &Source::Points(points), Some(hook))
}

pub(crate) fn empirical_matrices_sampled_hooked(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    m: usize,
    seed: u64,
    opts: &AssemblyOptions,
    hook: EvalHook<'_>,
) -> Result<GramPair> {
    assemble(
        dict,
        sys,
        op,
        opts,
        &Source::Sampled { measure, m, seed },
        Some(hook),
    )
}

struct Partial {
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    t: Option<DMatrix<f64>>,
}

fn assemble(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    opts: &AssemblyOptions,
    source: &Source<'_>,
    hook: Option<EvalHook<'_>>,
) -> Result<GramPair> {
    let m = source.m();
    if m == 0 {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    if source.dim() != dict.dim() || dict.dim() != sys.dim {
        return Err(Error::InvalidArgument(
            "points, dictionary, and system must share one dimension".into(),
        ));
    }
    if !matches!(opts.ibp, IbpMode::Off) {
        if let OperatorKind::KoopmanT { .. } = op {
            return Err(Error::InvalidArgument(
                "integration by parts applies to generator data, not finite-time data".into(),
            ));
        }
        if matches!(opts.ibp, IbpMode::Dirichlet) && sys.is_deterministic() {
            return Err(Error::InvalidArgument(
                "Dirichlet-form assembly of a deterministic system is identically zero".into(),
            ));
        }
    }
    let nblocks = m.div_ceil(SAMPLE_BLOCK);
    let partials: Vec<Partial> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let flat = source.block(b);
            block_partial(dict, sys, op, opts, hook, &flat, b * SAMPLE_BLOCK)
        })
        .collect::<Result<Vec<_>>>()?;
    // Fixed-order reduction: thread count cannot change the result.
    let n = dict.len();
    let mut g = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let want_t = opts.want_t && matches!(opts.ibp, IbpMode::Off);
    let mut t = want_t.then(|| DMatrix::zeros(n, n));
    for p in partials {
        g += p.g;
        c += p.c;
        if let (Some(t), Some(pt)) = (t.as_mut(), p.t) {
            *t += pt;
        }
    }
    let inv_m = 1.0 / m as f64;
    g.scale_mut(inv_m);
    c.scale_mut(inv_m);
    symmetrize(&mut g);
    if let Some(t) = t.as_mut() {
        t.scale_mut(inv_m);
        symmetrize(t);
    }
    if g.iter().any(|v| !v.is_finite())
        || c.iter().any(|v| !v.is_finite())
        || t.as_ref().is_some_and(|t| t.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite(
            "empirical matrices contain non-finite entries".into(),
        ));
    }
    Ok(GramPair {
        g,
        c,
        t_hat: t,
        m,
        operator: op,
        ibp: opts.ibp,
    })
}

fn block_partial(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    opts: &AssemblyOptions,
    hook: Option<EvalHook<'_>>,
    flat: &[f64],
    base_idx: usize,
) -> Result<Partial> {
    let n = dict.len();
    let d = dict.dim();
    let rows = flat.len() / d;
    let mut ev = dict.evaluator();
    let mut psi = vec![0.0; n];
    match opts.ibp {
        IbpMode::Off => {
            // The adjoint route uses Koopman-generator rows on the other slot.
            let row_op = match op {
                OperatorKind::PfGenerator => OperatorKind::KoopmanGenerator,
                other => other,
            };
            let stochastic_kt =
                matches!(op, OperatorKind::KoopmanT { .. }) && !sys.is_deterministic();
            let mut op_ev = OperatorEvaluator::new(dict, sys, row_op)?;
            let mut arow = vec![0.0; n];
            let mut p = DMatrix::zeros(rows, n);
            let mut a = DMatrix::zeros(rows, n);
            for r in 0..rows {
                let x = &flat[r * d..(r + 1) * d];
                ev.eval(x, &mut psi);
                if stochastic_kt {
                    let mut rng = stream(
                        opts.koopman_seed,
                        &[purpose::DIFFUSION, (base_idx + r) as u64],
                    );
                    op_ev.operator_row(x, Some(&mut rng), &mut arow)?;
                } else {
                    op_ev.operator_row(x, None, &mut arow)?;
                }
                if let Some(h) = hook {
                    h(base_idx + r, &mut psi, &mut arow);
                }
                for j in 0..n {
                    p[(r, j)] = psi[j];
                    a[(r, j)] = arow[j];
                }
            }
            let g = p.tr_mul(&p);
            let c = match op {
                OperatorKind::PfGenerator => p.tr_mul(&a),
                _ => a.tr_mul(&p),
            };
            let t = opts.want_t.then(|| a.tr_mul(&a));
            Ok(Partial { g, c, t })
        }
        IbpMode::Dirichlet | IbpMode::DriftCorrected => {
            let diffusive = !sys.is_deterministic();
            let drift_corrected = matches!(opts.ibp, IbpMode::DriftCorrected);
            let mut grad = vec![0.0; n * d];
            let mut sig = vec![0.0; d * d];
            let mut bvec = vec![0.0; d];
            let mut div_sig = vec![0.0; d];
            let mut v = vec![0.0; n * d];
            let mut p = DMatrix::zeros(rows, n);
            // Assembled in Koopman orientation, transposed at the end for
            // the adjoint route (the Dirichlet part is symmetric anyway).
            let mut c = DMatrix::zeros(n, n);
            let mut empty: [f64; 0] = [];
            for r in 0..rows {
                let x = &flat[r * d..(r + 1) * d];
                ev.eval(x, &mut psi);
                if let Some(h) = hook {
                    h(base_idx + r, &mut psi, &mut empty);
                }
                for j in 0..n {
                    p[(r, j)] = psi[j];
                }
                ev.gradient(x, &mut grad);
                if diffusive {
                    sys.sigma_sigma_t(x, &mut sig);
                    // V = (grad rows) * Sigma, then C -= 1/2 V W^T.
                    for i in 0..n {
                        for s in 0..d {
                            let mut acc = 0.0;
                            for q in 0..d {
                                acc += grad[i * d + q] * sig[q * d + s];
                            }
                            v[i * d + s] = acc;
                        }
                    }
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for s in 0..d {
                                acc += v[i * d + s] * grad[j * d + s];
                            }
                            c[(i, j)] -= 0.5 * acc;
                        }
                    }
                }
                if drift_corrected {
                    sys.drift(x, &mut bvec);
                    if diffusive {
                        sys.sigma_divergence(x, &mut div_sig)?;
                    }
                    for i in 0..n {
                        let gi = &grad[i * d..(i + 1) * d];
                        let mut u: f64 = bvec.iter().zip(gi).map(|(a, b)| a * b).sum();
                        if diffusive {
                            u -= 0.5 * div_sig.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                        }
                        for j in 0..n {
                            c[(i, j)] += u * psi[j];
                        }
                    }
                }
            }
            let g = p.tr_mul(&p);
            let c = match op {
                OperatorKind::PfGenerator => c.transpose(),
                _ => c,
            };
            Ok(Partial { g, c, t: None })
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

/// Result of one least-squares solve.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Matrix of the estimated operator acting on coefficient columns.
    pub a: DMatrix<f64>,
    pub gram: GramPair,
    /// Numerical rank of the Gram matrix at the applied truncation level.
    pub rank: usize,
    /// Eigendirections discarded by the pseudoinverse.
    pub truncated: usize,
}

/// Solve `A_hat^T = C G^+` with eigenvalue truncation at `rcond * lambda_max`
/// (default `N * eps`). Singular Grams are handled by the truncation, not
/// rejected; the result still minimizes `|C - A^T G|_F`.
pub fn solve_estimator(gp: GramPair, rcond: Option<f64>) -> EstimationResult {
    let n = gp.g.nrows();
    let rcond = rcond.unwrap_or(n as f64 * f64::EPSILON);
    let pinv = psd_pinv(&gp.g, rcond);
    let a_t = &gp.c * &pinv.pinv;
    EstimationResult {
        a: a_t.transpose(),
        rank: pinv.rank,
        truncated: pinv.truncated,
        gram: gp,
    }
}

// ---------------------------------------------------------------------------
// error functionals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixNorm {
    Spectral,
    Frobenius,
}

/// Absolute and normalized error between an estimate and a reference.
pub fn matrix_error(
    a: &DMatrix<f64>,
    a_ref: &DMatrix<f64>,
    norm: MatrixNorm,
) -> Result<(f64, f64)> {
    if a.shape() != a_ref.shape() {
        return Err(Error::InvalidArgument("shape mismatch".into()));
    }
    let diff = a - a_ref;
    let (abs, denom) = match norm {
        MatrixNorm::Spectral => (spectral_norm(&diff), spectral_norm(a_ref)),
        MatrixNorm::Frobenius => (diff.norm(), a_ref.norm()),
    };
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "reference matrix has zero norm; normalized error undefined".into(),
        ));
    }
    Ok((abs, abs / denom))
}

/// Norm of the operator represented by `t` on the space with Gram `g`.
///
/// Convention: `t` is in the row form `A psi_i = sum_j t[i][j] psi_j` (the
/// transpose of the coefficient-column matrix returned by the solver).
/// The value is `|G^{-1/2} t G^{1/2}|_2`, which is basis-independent.
pub fn operator_norm(t: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let (sqrt, inv_sqrt) = spd_sqrt_pair(g)?;
    Ok(spectral_norm(&(&inv_sqrt * t * &sqrt)))
}

/// The cheap upper bound `sqrt(kappa(G)) * |t|_2` — never below the exact
/// value, and equal to it when G is a multiple of the identity.
pub fn operator_norm_bound(t: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let kappa = spd_condition(g)?;
    Ok(kappa.sqrt() * spectral_norm(t))
}

/// Distance between the projected-operator image and the true image of an
/// observable: `| A_N P_N f - A f |` in L2 of the uniform measure.
///
/// `f` and `af` evaluate the observable and its true operator image
/// pointwise. The projection `P_N` is orthogonal in the graph inner product
/// `<u, v> + <A u, A v>`, whose matrix on the span is `G + T`. All inner
/// products are taken with the supplied quadrature rule, so the result is
/// meaningful only where pointwise operator rows exist.
pub fn projection_error(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    f: &dyn Fn(&[f64]) -> f64,
    af: &dyn Fn(&[f64]) -> f64,
    quad: &TensorQuadrature,
) -> Result<f64> {
    let n = dict.len();
    let volume = quad.volume();
    let mut ev = dict.evaluator();
    let mut op_ev = OperatorEvaluator::new(dict, sys, op)?;
    let mut psi = vec![0.0; n];
    let mut arow = vec![0.0; n];
    let mut g = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let mut t = DMatrix::zeros(n, n);
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    for q in 0..quad.len() {
        let x = quad.node(q);
        let w = quad.weight(q) / volume;
        ev.eval(x, &mut psi);
        op_ev.operator_row(x, None, &mut arow)?;
        let (fx, afx) = (f(x), af(x));
        for i in 0..n {
            rhs[i] += w * (psi[i] * fx + arow[i] * afx);
            for j in 0..=i {
                g[(i, j)] += w * psi[i] * psi[j];
                t[(i, j)] += w * arow[i] * arow[j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                c[(i, j)] += w * arow[i] * psi[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
            t[(j, i)] = t[(i, j)];
        }
    }
    let graph = &g + &t;
    let chol = nalgebra::Cholesky::<f64, nalgebra::Dyn>::new(graph).ok_or_else(|| {
        Error::Numerical("graph Gram matrix is not positive definite".into())
    })?;
    let coeffs = chol.solve(&rhs);
    // Coefficients of A_N P f in the basis: A acts on coefficient columns.
    let gchol = nalgebra::Cholesky::<f64, nalgebra::Dyn>::new(g.clone())
        .ok_or_else(|| Error::Numerical("Gram matrix is not positive definite".into()))?;
    let a_n = gchol.solve(&c.transpose());
    let image = &a_n * &coeffs;
    let mut err2 = 0.0;
    for q in 0..quad.len() {
        let x = quad.node(q);
        let w = quad.weight(q) / volume;
        ev.eval(x, &mut psi);
        let approx: f64 = psi.iter().zip(image.iter()).map(|(p, c)| p * c).sum();
        let diff = approx - af(x);
        err2 += w * diff * diff;
    }
    Ok(err2.max(0.0).sqrt())
}
