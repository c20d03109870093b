//! Basis families spanning the finite approximation space, with the
//! derivative and sup-bound information the estimator and the concentration
//! bounds need.
//!
//! Three families:
//!
//! * `monomials(d, k)` — all monomials of total degree <= k, graded-lex;
//! * `gaussians(centers, theta)` — isotropic bumps on arbitrary centers;
//! * `fem_linear(mesh)` — hat functions with zero boundary condition.
//!
//! Besides plain evaluation, the module applies an operator to a whole basis
//! row at a point: `A psi_1(x) .. A psi_N(x)` for the Koopman generator, its
//! formal adjoint, or the finite-time Koopman operator sampled by Monte
//! Carlo. That row is exactly the per-sample data the estimator consumes.
//!
//! Note on the adjoint: `PfGenerator` rows are the pointwise adjoint
//! `L* psi_n` (density side). The *estimator* does not use them — it builds
//! the Perron-Frobenius structure matrix by transposing Koopman-generator
//! assembly, which is the adjoint relation at the matrix level. Pointwise
//! adjoint rows exist for direct evaluation, residual diagnostics, and
//! quadrature references.

mod fem;
mod gaussians;
mod monomials;

pub use fem::{FemLinear, MeshSpec};
pub use gaussians::{half_spaced_grid, quadrant_centers, Gaussians};
pub use monomials::{graded_lex_exponents, Monomials};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::systems::{evolve, Domain, DynamicalSystem};

/// Which operator the data rows sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    /// Generator of the Koopman semigroup: `L f = b . grad f + 1/2 Tr(Sigma Hess f)`.
    KoopmanGenerator,
    /// Formal adjoint of `L` (Perron-Frobenius generator, density side).
    PfGenerator,
    /// Finite-time Koopman operator `K^t f = E[f(Phi^t(.))]`, sampled with
    /// an Euler-Maruyama flow of step `h` and `n_realizations` averaged
    /// trajectories per evaluation point.
    KoopmanT {
        t: f64,
        h: f64,
        n_realizations: usize,
    },
}

impl OperatorKind {
    /// Whether pointwise rows need second derivatives of the basis on a
    /// diffusive system.
    pub fn needs_hessian(&self, sys: &DynamicalSystem) -> bool {
        match self {
            OperatorKind::KoopmanGenerator | OperatorKind::PfGenerator => !sys.is_deterministic(),
            OperatorKind::KoopmanT { .. } => false,
        }
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            OperatorKind::KoopmanGenerator => "koopman_generator",
            OperatorKind::PfGenerator => "pf_generator",
            OperatorKind::KoopmanT { .. } => "koopman_t",
        }
    }
}

/// Differentiability class of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// C^0, piecewise linear: gradients a.e., no pointwise Hessians.
    PiecewiseLinear,
    /// C-infinity.
    Smooth,
}

enum Family {
    Monomials(Monomials),
    Gaussians(Gaussians),
    Fem(FemLinear),
}

/// A basis family of size N in d variables.
pub struct Dictionary {
    family: Family,
    dim: usize,
    len: usize,
}

/// Monomials of total degree <= k.
pub fn monomials(d: usize, k: usize) -> Dictionary {
    let m = Monomials::new(d, k);
    let (dim, len) = (d, m.len());
    Dictionary {
        family: Family::Monomials(m),
        dim,
        len,
    }
}

/// Gaussian bumps with shared bandwidth.
pub fn gaussians(centers: Vec<Vec<f64>>, theta: f64) -> Result<Dictionary> {
    let g = Gaussians::new(centers, theta)?;
    let (dim, len) = (g.d, g.len());
    Ok(Dictionary {
        family: Family::Gaussians(g),
        dim,
        len,
    })
}

/// Hat functions on a uniform tensor mesh.
pub fn fem_linear(mesh: MeshSpec) -> Dictionary {
    let f = FemLinear::new(mesh);
    let (dim, len) = (f.dim(), f.len());
    Dictionary {
        family: Family::Fem(f),
        dim,
        len,
    }
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family_name(&self) -> &'static str {
        match &self.family {
            Family::Monomials(_) => "monomials",
            Family::Gaussians(_) => "gaussians",
            Family::Fem(_) => "fem",
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match &self.family {
            Family::Fem(_) => Smoothness::PiecewiseLinear,
            _ => Smoothness::Smooth,
        }
    }

    pub fn hessian_available(&self) -> bool {
        self.smoothness() == Smoothness::Smooth
    }

    /// Exponent tuples when this is the monomial family.
    pub fn monomial_exponents(&self) -> Option<&[Vec<u32>]> {
        match &self.family {
            Family::Monomials(m) => Some(&m.exponents),
            _ => None,
        }
    }

    /// (centers, bandwidth) when this is the Gaussian family.
    pub fn gaussian_params(&self) -> Option<(&[Vec<f64>], f64)> {
        match &self.family {
            Family::Gaussians(g) => Some((&g.centers, g.theta)),
            _ => None,
        }
    }

    /// Mesh when this is the hat-function family.
    pub fn fem_mesh(&self) -> Option<&MeshSpec> {
        match &self.family {
            Family::Fem(f) => Some(&f.mesh),
            _ => None,
        }
    }

    /// Stateful row evaluator. Hot loops should create one per worker and
    /// reuse it; the plain `eval_vec`/`gradient_vec` helpers below allocate
    /// on every call.
    pub fn evaluator(&self) -> RowEvaluator<'_> {
        RowEvaluator {
            dict: self,
            scratch: Vec::new(),
        }
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.evaluator().eval(x, &mut out);
        out
    }

    pub fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len * self.dim];
        self.evaluator().gradient(x, &mut out);
        out
    }

    /// Sup-bound gamma for the identity operator: a value with
    /// `|Psi(x)|^2 <= gamma` on the domain.
    pub fn gamma_identity(&self, domain: &Domain) -> f64 {
        match &self.family {
            Family::Monomials(m) => m.sup_bound_identity(&domain.bounds),
            Family::Gaussians(g) => g.len() as f64,
            Family::Fem(f) => f.overlap_count() as f64,
        }
    }

    /// Sup-bound gamma for operator rows: a value with `|A Psi(x)|^2 <= gamma`
    /// on the domain, found by a deterministic dense scan with local
    /// golden-section refinement. With `sharp = false` the scan result is
    /// doubled as a safety margin; `sharp = true` trusts the scan (suitable
    /// for the smooth builtin benchmarks, where the maximizer sits on a
    /// corner or a well-resolved interior critical point).
    ///
    /// For `KoopmanT`, `|K^t psi| <= sup |psi|` pointwise, so the identity
    /// bound is returned for the uniformly bounded families; monomials are
    /// unbounded along exiting trajectories and get a hard error.
    pub fn gamma_operator(
        &self,
        sys: &DynamicalSystem,
        op: OperatorKind,
        sharp: bool,
    ) -> Result<f64> {
        if let OperatorKind::KoopmanT { .. } = op {
            return match &self.family {
                Family::Monomials(_) => Err(Error::Unsupported(
                    "no certified sup-bound for Koopman-operator rows over monomials: \
                     trajectories may leave the sampling box"
                        .into(),
                )),
                _ => Ok(self.gamma_identity(&sys.domain)),
            };
        }
        let sup2 = self.scan_operator_sup_sq(sys, op)?;
        Ok(if sharp { sup2 } else { 2.0 * sup2 })
    }

    /// Dense-grid maximum of |A Psi(x)|^2 with coordinate-wise golden-section
    /// polish. Deterministic by construction.
    fn scan_operator_sup_sq(&self, sys: &DynamicalSystem, op: OperatorKind) -> Result<f64> {
        let d = self.dim;
        let per_axis = match d {
            1 => 2049,
            2 => 129,
            _ => 33,
        };
        let mut ev = OperatorEvaluator::new(self, sys, op)?;
        let mut row = vec![0.0; self.len];
        let obj = |x: &[f64], ev: &mut OperatorEvaluator, row: &mut [f64]| -> Result<f64> {
            ev.operator_row(x, None, row)?;
            Ok(row.iter().map(|v| v * v).sum())
        };
        // Grid pass.
        let axes: Vec<Vec<f64>> = sys
            .domain
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                    .collect()
            })
            .collect();
        let mut best_x = vec![0.0; d];
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; d];
        loop {
            let x: Vec<f64> = (0..d).map(|i| axes[i][idx[i]]).collect();
            let v = obj(&x, &mut ev, &mut row)?;
            if v > best {
                best = v;
                best_x = x;
            }
            // Odometer increment over the tensor grid.
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == d {
                    break;
                }
            }
            if axis == d {
                break;
            }
        }
        // Coordinate-descent golden polish within one grid cell of the max.
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..3 {
            for axis in 0..d {
                let (lo, hi) = sys.domain.bounds[axis];
                let step = (hi - lo) / (per_axis - 1) as f64;
                let mut a = (best_x[axis] - step).max(lo);
                let mut b = (best_x[axis] + step).min(hi);
                for _ in 0..40 {
                    let c = b - phi * (b - a);
                    let e = a + phi * (b - a);
                    let mut xc = best_x.clone();
                    xc[axis] = c;
                    let mut xe = best_x.clone();
                    xe[axis] = e;
                    if obj(&xc, &mut ev, &mut row)? >= obj(&xe, &mut ev, &mut row)? {
                        b = e;
                    } else {
                        a = c;
                    }
                }
                let mid = 0.5 * (a + b);
                let mut xm = best_x.clone();
                xm[axis] = mid;
                let v = obj(&xm, &mut ev, &mut row)?;
                if v > best {
                    best = v;
                    best_x = xm;
                }
            }
        }
        Ok(best)
    }
}

/// Reusable evaluation state for one dictionary.
pub struct RowEvaluator<'a> {
    dict: &'a Dictionary,
    scratch: Vec<f64>,
}

impl RowEvaluator<'_> {
    /// `out[n] = psi_n(x)`.
    pub fn eval(&mut self, x: &[f64], out: &mut [f64]) {
        match &self.dict.family {
            Family::Monomials(m) => m.eval(x, &mut self.scratch, out),
            Family::Gaussians(g) => g.eval(x, out),
            Family::Fem(f) => f.eval(x, out),
        }
    }

    /// `out[n*d + j] = d_j psi_n(x)`.
    pub fn gradient(&mut self, x: &[f64], out: &mut [f64]) {
        match &self.dict.family {
            Family::Monomials(m) => m.gradient(x, &mut self.scratch, out),
            Family::Gaussians(g) => g.gradient(x, out),
            Family::Fem(f) => f.gradient(x, out),
        }
    }

    /// Hessian block of basis function n, row-major d x d. Hard error for
    /// piecewise-linear families: their second derivative is a measure on
    /// the mesh lines, not a function, and pretending it is zero would make
    /// second-order generator data silently wrong.
    pub fn hessian(&mut self, x: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
        match &self.dict.family {
            Family::Monomials(m) => {
                m.hessian(x, n, &mut self.scratch, out);
                Ok(())
            }
            Family::Gaussians(g) => {
                g.hessian(x, n, out);
                Ok(())
            }
            Family::Fem(_) => Err(Error::Unsupported(
                "hat functions have no pointwise Hessian; use the integration-by-parts assembly"
                    .into(),
            )),
        }
    }
}

/// Checks dictionary/system/operator compatibility for *pointwise* operator
/// rows. (The integration-by-parts assembly has its own, laxer requirement:
/// gradients only.)
pub fn check_pointwise_compat(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
) -> Result<()> {
    if dict.dim() != sys.dim {
        return Err(Error::InvalidArgument(format!(
            "dictionary dimension {} != system dimension {}",
            dict.dim(),
            sys.dim
        )));
    }
    if op.needs_hessian(sys) && !dict.hessian_available() {
        return Err(Error::Unsupported(format!(
            "{} on the diffusive system '{}' needs basis Hessians, which the {} family \
             does not have; select the integration-by-parts assembly instead",
            op.label(),
            sys.name,
            dict.family_name()
        )));
    }
    Ok(())
}

/// Stateful evaluator of operator rows `(A psi_1(x), ..., A psi_N(x))`.
pub struct OperatorEvaluator<'a> {
    dict: &'a Dictionary,
    sys: &'a DynamicalSystem,
    op: OperatorKind,
    rows: RowEvaluator<'a>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    sigma: Vec<f64>,
    b: Vec<f64>,
    div_sigma: Vec<f64>,
    end_row: Vec<f64>,
}

impl<'a> OperatorEvaluator<'a> {
    pub fn new(dict: &'a Dictionary, sys: &'a DynamicalSystem, op: OperatorKind) -> Result<Self> {
        check_pointwise_compat(dict, sys, op)?;
        let d = sys.dim;
        let n = dict.len();
        Ok(OperatorEvaluator {
            dict,
            sys,
            op,
            rows: dict.evaluator(),
            grad: vec![0.0; n * d],
            hess: vec![0.0; d * d],
            sigma: vec![0.0; d * d],
            b: vec![0.0; d],
            div_sigma: vec![0.0; d],
            end_row: vec![0.0; n],
        })
    }

    /// Evaluate the full operator row at x into `out` (length N).
    ///
    /// `rng` is only consulted by `KoopmanT` on stochastic systems (one
    /// Wiener stream per call); pass `None` everywhere else.
    pub fn operator_row(
        &mut self,
        x: &[f64],
        rng: Option<&mut ChaCha8Rng>,
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.sys.dim;
        let n = self.dict.len();
        match self.op {
            OperatorKind::KoopmanGenerator => {
                self.sys.drift(x, &mut self.b);
                self.rows.gradient(x, &mut self.grad);
                let diffusive = !self.sys.is_deterministic();
                if diffusive {
                    self.sys.sigma_sigma_t(x, &mut self.sigma);
                }
                for i in 0..n {
                    let g = &self.grad[i * d..(i + 1) * d];
                    let mut v: f64 = self.b.iter().zip(g).map(|(bi, gi)| bi * gi).sum();
                    if diffusive {
                        self.rows.hessian(x, i, &mut self.hess)?;
                        let mut tr = 0.0;
                        for r in 0..d {
                            for c in 0..d {
                                tr += self.sigma[r * d + c] * self.hess[c * d + r];
                            }
                        }
                        v += 0.5 * tr;
                    }
                    out[i] = v;
                }
                Ok(())
            }
            OperatorKind::PfGenerator => {
                // L* psi = -b.grad psi - (div b) psi
                //          + (div Sigma).grad psi + 1/2 (dd Sigma) psi
                //          + 1/2 Tr(Sigma Hess psi)
                self.sys.drift(x, &mut self.b);
                self.rows.gradient(x, &mut self.grad);
                self.rows.eval(x, &mut self.end_row);
                let div_b = self.sys.drift_divergence(x)?;
                let diffusive = !self.sys.is_deterministic();
                let mut dd_sigma = 0.0;
                if diffusive {
                    self.sys.sigma_sigma_t(x, &mut self.sigma);
                    dd_sigma = self.sys.sigma_divergence(x, &mut self.div_sigma)?;
                }
                for i in 0..n {
                    let g = &self.grad[i * d..(i + 1) * d];
                    let mut v = -self.b.iter().zip(g).map(|(bi, gi)| bi * gi).sum::<f64>()
                        - div_b * self.end_row[i];
                    if diffusive {
                        v += self.div_sigma.iter().zip(g).map(|(s, gi)| s * gi).sum::<f64>()
                            + 0.5 * dd_sigma * self.end_row[i];
                        self.rows.hessian(x, i, &mut self.hess)?;
                        let mut tr = 0.0;
                        for r in 0..d {
                            for c in 0..d {
                                tr += self.sigma[r * d + c] * self.hess[c * d + r];
                            }
                        }
                        v += 0.5 * tr;
                    }
                    out[i] = v;
                }
                Ok(())
            }
            OperatorKind::KoopmanT {
                t,
                h,
                n_realizations,
            } => {
                if n_realizations == 0 {
                    return Err(Error::InvalidArgument(
                        "koopman_t needs n_realizations >= 1".into(),
                    ));
                }
                let deterministic = self.sys.is_deterministic();
                let reps = if deterministic { 1 } else { n_realizations };
                if !deterministic && rng.is_none() {
                    return Err(Error::InvalidArgument(
                        "koopman_t on a stochastic system needs an rng stream".into(),
                    ));
                }
                out.fill(0.0);
                let mut local_rng = rng;
                // All N basis functions share each realized endpoint: one
                // trajectory per realization, not one per basis function.
                let mut fallback = crate::rng::stream(0, &[]);
                for _ in 0..reps {
                    let r = match local_rng.as_deref_mut() {
                        Some(r) => r,
                        None => &mut fallback, // deterministic flow: never sampled
                    };
                    let end = evolve(self.sys, x, t, h, r)?;
                    self.rows.eval(&end, &mut self.end_row);
                    for (o, v) in out.iter_mut().zip(&self.end_row) {
                        *o += v;
                    }
                }
                if reps > 1 {
                    let inv = 1.0 / reps as f64;
                    for o in out.iter_mut() {
                        *o *= inv;
                    }
                }
                Ok(())
            }
        }
    }
}

/// One-shot convenience wrapper around `OperatorEvaluator`.
pub fn apply_operator_row(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    x: &[f64],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<f64>> {
    let mut ev = OperatorEvaluator::new(dict, sys, op)?;
    let mut out = vec![0.0; dict.len()];
    ev.operator_row(x, rng, &mut out)?;
    Ok(out)
}
