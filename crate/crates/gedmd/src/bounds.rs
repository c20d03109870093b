//! Concentration bounds and sample-size certificates.
//!
//! Everything here is driven by one matrix Bernstein tail: for i.i.d. draws
//! of bounded random vectors `g`, `c` with `|g|^2, |c|^2 <= gamma`, the
//! empirical covariance `(1/M) sum c_m g_m^T` concentrates around its mean
//! at spectral-norm scale `delta` once
//!
//! ```text
//! M > (3 max{|G|, |T|} + 2 delta) * (2 gamma / (3 delta^2)) * log(2N / (1-p)).
//! ```
//!
//! The certificates chain this through the resolvent expansion of `G^{-1}`
//! to a radius on the estimated operator itself, and `verify_coverage` closes
//! the loop by measuring how often the certified events actually hold.
//!
//! Conventions worth keeping straight:
//! - `gamma` is a sup bound on the squared euclidean norm of the evaluation
//!   vector. The Gram-only certificate needs it for `Psi` alone; everything
//!   involving the structure matrix needs it for the operator images too, so
//!   callers should pass the larger of the two there.
//! - Certificate constants come from reference matrices (closed form or
//!   quadrature), not from the empirical run being certified.
//! - All tails are evaluated in log space; `M` up to `2^20` and radii down to
//!   machine scale must not underflow.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dictionary::{Dictionary, OperatorKind};
use crate::error::{Error, Result};
use crate::estimator::{
    empirical_matrices, empirical_matrices_sampled, galerkin_matrix, operator_norm,
    solve_estimator, AssemblyOptions, GramPair, ReferenceMatrices,
};
use crate::linalg::{spectral_norm, symmetric_eigen_sorted};
use crate::rng::{mix, purpose};
use crate::systems::{DynamicalSystem, PointSet, SamplingMeasure};

/// Spectral-norm constants of one reference configuration, the raw material
/// of every certificate.
#[derive(Debug, Clone, Copy)]
pub struct OperatorConstants {
    pub n: usize,
    pub norm_g: f64,
    pub norm_g_inv: f64,
    pub norm_c: f64,
    pub norm_t: f64,
    /// Sup bound on the squared evaluation-vector norm. For structure and
    /// projection certificates this must cover the operator images as well.
    pub gamma: f64,
}

impl OperatorConstants {
    /// Extract norms from reference matrices. `G` must be positive definite
    /// and the reference must carry the `<A psi_i, A psi_j>` matrix.
    pub fn from_reference(refm: &ReferenceMatrices, gamma: f64) -> Result<Self> {
        let (evs, _) = symmetric_eigen_sorted(&refm.g);
        let n = refm.g.nrows();
        let lambda_min = evs[n - 1];
        if lambda_min <= 0.0 {
            return Err(Error::Numerical(
                "reference Gram matrix is not positive definite".into(),
            ));
        }
        Ok(OperatorConstants {
            n,
            norm_g: evs[0],
            norm_g_inv: 1.0 / lambda_min,
            norm_c: spectral_norm(&refm.c),
            norm_t: spectral_norm(refm.t_required()?),
            gamma,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.norm_g * self.norm_g_inv
    }

    /// Operator-norm amplification factor `sqrt(kappa) (1 + |C||G^{-1}|)`.
    pub fn rho(&self) -> f64 {
        self.kappa().sqrt() * (1.0 + self.norm_c * self.norm_g_inv)
    }

    /// Largest `delta` for which the resolvent expansion behind the
    /// Gram-inverse certificate converges: `delta < 1/(2|G^{-1}|)`.
    pub fn validity_limit(&self) -> f64 {
        0.5 / self.norm_g_inv
    }
}

/// Which concentration result a report certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Gram-matrix inverse: invertibility plus `|Ghat^-1 - G^-1| < 2|G^-1|^2 d`.
    LemmaGram,
    /// Structure matrix: `|Chat - C| < delta`.
    LemmaStructure,
    /// Projected operator at fixed `delta`.
    PropProjection,
    /// Projected operator at a target `epsilon`, `delta` derived.
    ThmOrderConvergence,
    /// Noisy-data variant of the projection certificate.
    PropNoise,
    /// Noisy-data variant of the order-of-convergence schedule.
    ThmOrderConvergenceNoise,
}

impl BoundKind {
    pub fn label(&self) -> &'static str {
        match self {
            BoundKind::LemmaGram => "lemma-G",
            BoundKind::LemmaStructure => "lemma-C",
            BoundKind::PropProjection => "prop-projection",
            BoundKind::ThmOrderConvergence => "thm-OC",
            BoundKind::PropNoise => "prop-noise",
            BoundKind::ThmOrderConvergenceNoise => "thm-OC-noise",
        }
    }
}

/// One sample-size / error certificate.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub n: usize,
    /// Matrix-level deviation the certificate is pinned to (the derived
    /// `delta_N` for the epsilon-targeted schedules).
    pub delta: f64,
    /// Operator-level target where one exists.
    pub epsilon: Option<f64>,
    pub p: f64,
    pub required_m: u64,
    /// Certified operator-norm radius (for the matrix lemmas, the radius of
    /// the certified matrix event).
    pub radius: f64,
}

impl BoundReport {
    /// The harness CSV record: result-kind, N, delta, p, required_M, radius.
    pub fn csv_record(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{},{:.16e}",
            self.kind.label(),
            self.n,
            self.delta,
            self.p,
            self.required_m,
            self.radius
        )
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

fn check_positive(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

fn check_validity(delta: f64, norm_g_inv: f64) -> Result<()> {
    let limit = 0.5 / norm_g_inv;
    if delta >= limit {
        return Err(Error::Validity(format!(
            "delta = {delta} outside the resolvent validity range (0, {limit}); \
             the Gram-inverse expansion diverges beyond it"
        )));
    }
    Ok(())
}

/// Tail probability `P[|Z| >= delta]` for the deviation of an empirical
/// covariance built from `M` draws with sup bound `gamma`: the closed form is
/// `2N exp(-M delta^2/2 / (gamma (max{|T|,|G|} + 2 delta/3)))`, evaluated in
/// log space and clamped to `[0, 1]`.
pub fn bernstein_covariance_tail(
    m: u64,
    n: usize,
    delta: f64,
    gamma: f64,
    norm_g: f64,
    norm_t: f64,
) -> f64 {
    let scale = gamma * (norm_g.max(norm_t) + 2.0 * delta / 3.0);
    let log_tail = (2.0 * n as f64).ln() - (m as f64) * delta * delta / (2.0 * scale);
    log_tail.exp().clamp(0.0, 1.0)
}

/// Shared sample-size formula: smallest integer strictly above
/// `(3 bracket + 2 delta) * (2 gamma / (3 delta^2)) * ln(count / (1 - q))`.
fn required_m(bracket: f64, gamma: f64, delta: f64, count: f64, q: f64) -> Result<u64> {
    let log_term = (count / (1.0 - q)).ln();
    let value = (3.0 * bracket + 2.0 * delta) * (2.0 * gamma / (3.0 * delta * delta)) * log_term;
    if !value.is_finite() || value >= u64::MAX as f64 {
        return Err(Error::Numerical(format!(
            "required sample size {value:e} is not representable"
        )));
    }
    Ok(value.ceil() as u64 + 1)
}

/// Samples needed so that, with probability at least `p`, the empirical Gram
/// matrix is invertible with `|Ghat^-1 - G^-1| < 2 |G^-1|^2 delta`.
///
/// The conclusion relies on a resolvent expansion that only converges for
/// `delta < 1/(2 |G^-1|)`; the check runs when `norm_g_inv` is supplied and
/// is a hard error when violated. `gamma` bounds `|Psi(x)|^2` alone.
pub fn required_m_gram(
    n: usize,
    delta: f64,
    p: f64,
    gamma: f64,
    norm_g: f64,
    norm_g_inv: Option<f64>,
) -> Result<u64> {
    check_probability(p)?;
    check_positive(delta, "delta")?;
    check_positive(gamma, "gamma")?;
    check_positive(norm_g, "norm_g")?;
    if let Some(gi) = norm_g_inv {
        check_validity(delta, gi)?;
    }
    required_m(norm_g, gamma, delta, 2.0 * n as f64, p)
}

/// Samples needed so that `P[|Chat - C| < delta] >= p`. No validity window:
/// the structure matrix needs no inversion. `gamma` must bound the squared
/// norms of both `Psi(x)` and the operator images.
pub fn required_m_structure(
    n: usize,
    delta: f64,
    p: f64,
    gamma: f64,
    norm_g: f64,
    norm_t: f64,
) -> Result<u64> {
    check_probability(p)?;
    check_positive(delta, "delta")?;
    check_positive(gamma, "gamma")?;
    check_positive(norm_g, "norm_g")?;
    check_positive(norm_t, "norm_t")?;
    required_m(norm_g.max(norm_t), gamma, delta, 2.0 * n as f64, p)
}

/// Certificate for the estimated operator at matrix deviation `delta`: with
/// the returned `M`, `|Ahat - A_N| <= 2 rho |G^-1| delta` holds in operator
/// norm with probability at least `p`.
pub fn projection_error_certificate(
    consts: &OperatorConstants,
    delta: f64,
    p: f64,
) -> Result<BoundReport> {
    check_probability(p)?;
    check_positive(delta, "delta")?;
    check_validity(delta, consts.norm_g_inv)?;
    let m = required_m(
        consts.norm_g.max(consts.norm_t),
        consts.gamma,
        delta,
        4.0 * consts.n as f64,
        p,
    )?;
    Ok(BoundReport {
        kind: BoundKind::PropProjection,
        n: consts.n,
        delta,
        epsilon: None,
        p,
        required_m: m,
        radius: 2.0 * consts.rho() * consts.norm_g_inv * delta,
    })
}

/// Sample-size schedule for a target operator-norm error `epsilon`: derives
/// the matrix deviation `delta_N = epsilon / (2 rho |G^-1|)` and certifies
/// `P[|Ahat - A_N| <= epsilon] >= p` at the returned `M`.
pub fn oc_schedule(consts: &OperatorConstants, epsilon: f64, p: f64) -> Result<BoundReport> {
    check_probability(p)?;
    check_positive(epsilon, "epsilon")?;
    let rho = consts.rho();
    if epsilon >= rho {
        return Err(Error::Validity(format!(
            "target epsilon = {epsilon} must be below rho = {rho}"
        )));
    }
    let delta = epsilon / (2.0 * rho * consts.norm_g_inv);
    let m = required_m(
        consts.norm_g.max(consts.norm_t),
        consts.gamma,
        delta,
        4.0 * consts.n as f64,
        p,
    )?;
    Ok(BoundReport {
        kind: BoundKind::ThmOrderConvergence,
        n: consts.n,
        delta,
        epsilon: Some(epsilon),
        p,
        required_m: m,
        radius: epsilon,
    })
}

/// Noisy-data counterparts: same certificates with `gamma` inflated by the
/// noise truncation level and the confidence rescaled by the admissibility
/// probability `p_tilde = P[|(eta, xi)|^2 <= gamma_tilde]`.
pub(crate) fn noisy_required_m(
    consts: &OperatorConstants,
    delta: f64,
    p: f64,
    p_tilde: f64,
    gamma_tilde: f64,
) -> Result<u64> {
    required_m(
        consts.norm_g.max(consts.norm_t),
        consts.gamma + gamma_tilde,
        delta,
        4.0 * consts.n as f64,
        p / p_tilde,
    )
}

// ---------------------------------------------------------------------------
// empirical verification
// ---------------------------------------------------------------------------

/// Empirical graph-norm matrix `(1/M) sum A Psi(x_m) A Psi(x_m)^T`, the
/// residual-DMD building block. Requires pointwise operator rows.
pub fn residual_t_estimator(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    points: &PointSet,
) -> Result<DMatrix<f64>> {
    let opts = AssemblyOptions {
        want_t: true,
        ..AssemblyOptions::default()
    };
    let gp = empirical_matrices(dict, sys, op, points, &opts)?;
    gp.t_hat.ok_or_else(|| {
        Error::Unsupported("no graph-norm matrix for integration-by-parts assemblies".into())
    })
}

/// Everything needed to re-run the estimation a certificate talks about.
pub struct CoverageSetup<'a> {
    pub dict: &'a Dictionary,
    pub sys: &'a DynamicalSystem,
    pub op: OperatorKind,
    pub measure: &'a SamplingMeasure,
    /// True matrices the certified events compare against; also the source
    /// of the certificate constants.
    pub reference: &'a ReferenceMatrices,
}

/// Repeat the certified experiment `trials` times and report the fraction of
/// trials in which the certified event held. Sound certificates produce
/// frequencies at or above `p` minus binomial noise.
///
/// `delta` is the matrix deviation for the lemma kinds and the operator
/// target `epsilon` for [`BoundKind::ThmOrderConvergence`]. `m_override`
/// replaces the certified sample size (diagnostics only: forcing `M` below
/// the certified value voids the guarantee, which is precisely what it is
/// for). Noise-model kinds are verified by their own module.
pub fn verify_coverage(
    kind: BoundKind,
    setup: &CoverageSetup<'_>,
    consts: &OperatorConstants,
    delta: f64,
    p: f64,
    trials: usize,
    seed: u64,
    m_override: Option<usize>,
) -> Result<f64> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "coverage verification needs at least 100 trials for a stable frequency, got {trials}"
        )));
    }
    let refm = setup.reference;
    let n = refm.g.nrows();

    // Certified sample size and the event predicate, per result kind.
    enum Event {
        GramInverse { g_inv: DMatrix<f64>, radius: f64 },
        Structure { radius: f64 },
        Operator { a_ref_rows: DMatrix<f64>, radius: f64 },
    }
    let (m_cert, event) = match kind {
        BoundKind::LemmaGram => {
            // The event is well defined for any delta, so the coverage run
            // skips the resolvent validity gate and verifies the stated
            // radius as-is.
            let m = required_m_gram(n, delta, p, consts.gamma, consts.norm_g, None)?;
            let chol = nalgebra::Cholesky::<f64, nalgebra::Dyn>::new(refm.g.clone())
                .ok_or_else(|| {
                    Error::Numerical("reference Gram matrix is not positive definite".into())
                })?;
            let g_inv = chol.inverse();
            let radius = 2.0 * consts.norm_g_inv * consts.norm_g_inv * delta;
            (m, Event::GramInverse { g_inv, radius })
        }
        BoundKind::LemmaStructure => {
            let m = required_m_structure(n, delta, p, consts.gamma, consts.norm_g, consts.norm_t)?;
            (m, Event::Structure { radius: delta })
        }
        BoundKind::PropProjection => {
            let report = projection_error_certificate(consts, delta, p)?;
            let a_ref = galerkin_matrix(refm)?;
            (
                report.required_m,
                Event::Operator {
                    a_ref_rows: a_ref.transpose(),
                    radius: report.radius,
                },
            )
        }
        BoundKind::ThmOrderConvergence => {
            let report = oc_schedule(consts, delta, p)?;
            let a_ref = galerkin_matrix(refm)?;
            (
                report.required_m,
                Event::Operator {
                    a_ref_rows: a_ref.transpose(),
                    radius: report.radius,
                },
            )
        }
        BoundKind::PropNoise | BoundKind::ThmOrderConvergenceNoise => {
            return Err(Error::Unsupported(
                "noisy-data coverage runs through the noise module, which owns the \
                 perturbation streams"
                    .into(),
            ));
        }
    };
    let m = m_override.unwrap_or(usize::try_from(m_cert).map_err(|_| {
        Error::Numerical(format!("certified sample size {m_cert} exceeds usize"))
    })?);

    let opts = AssemblyOptions::default();
    let hits = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<u32> {
            let trial_seed = mix(seed, &[purpose::COVERAGE, trial as u64]);
            let gp: GramPair = empirical_matrices_sampled(
                setup.dict,
                setup.sys,
                setup.op,
                setup.measure,
                m,
                trial_seed,
                &opts,
            )?;
            let hit = match &event {
                Event::GramInverse { g_inv, radius } => {
                    match nalgebra::Cholesky::<f64, nalgebra::Dyn>::new(gp.g.clone()) {
                        Some(chol) => spectral_norm(&(chol.inverse() - g_inv)) < *radius,
                        None => false,
                    }
                }
                Event::Structure { radius } => spectral_norm(&(&gp.c - &refm.c)) < *radius,
                Event::Operator { a_ref_rows, radius } => {
                    let est = solve_estimator(gp, None);
                    let diff = est.a.transpose() - a_ref_rows;
                    operator_norm(&diff, &refm.g)? <= *radius
                }
            };
            Ok(hit as u32)
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(f64::from(hits.iter().sum::<u32>()) / trials as f64)
}
