//! Reference (non-empirical) Gram and structure matrices.
//!
//! Three provenances, in decreasing order of sharpness:
//!
//! * **analytic** — closed forms. Monomials against the polynomial benchmark
//!   systems reduce every entry to box moments of monomials; Gaussian Grams
//!   reduce to error functions. Structure entries for Gaussians, and
//!   everything for hat functions, fall back internally to panel-aligned
//!   composite quadrature, which is exact for the piecewise-polynomial
//!   integrands involved.
//! * **quadrature** — composite tensor Gauss-Legendre with configurable
//!   panel counts.
//! * **monte-carlo** — a high-M empirical assembly on a dedicated seed,
//!   which is how the sweep harness builds its baseline when nothing
//!   sharper is available (stochastic finite-time data).
//!
//! Conventions: all inner products are means over the sampling box (uniform
//! measure). `C[i][j] = <A psi_i, psi_j>` for the Koopman generator; the
//! Perron-Frobenius estimator targets the adjoint pairing, so its reference
//! is the transpose of the Koopman `C` with the same `G` and `T`. `T[i][j] =
//! <A psi_i, A psi_j>` exists only when operator rows are pointwise
//! square-integrable; the integration-by-parts assemblies have no such `T`
//! and record `None`.

use nalgebra::DMatrix;
use statrs::function::erf::erf;

use super::quadrature::tensor_gauss_legendre;
use super::{empirical_matrices_sampled, AssemblyOptions, IbpMode};
use crate::dictionary::{Dictionary, OperatorEvaluator, OperatorKind};
use crate::error::{Error, Result};
use crate::systems::{BuiltinId, DynamicalSystem, SamplingMeasure};

/// How a reference triple was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Analytic,
    Quadrature { panels: Vec<usize> },
    MonteCarlo { m_ref: usize, seed: u64 },
}

/// Requested construction method.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMethod {
    Analytic,
    /// `panels = None` picks family-appropriate defaults (mesh-aligned for
    /// hats, bandwidth-resolving for Gaussians).
    Quadrature { panels: Option<Vec<usize>> },
    MonteCarlo { m_ref: usize, seed: u64 },
}

/// Reference Gram/structure/graph-norm matrices for one (dictionary,
/// system, operator, assembly-mode) combination.
#[derive(Debug, Clone)]
pub struct ReferenceMatrices {
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `<A psi_i, A psi_j>`; absent for integration-by-parts assemblies,
    /// whose data rows are not operator images.
    pub t: Option<DMatrix<f64>>,
    pub provenance: Provenance,
}

impl ReferenceMatrices {
    pub fn t_required(&self) -> Result<&DMatrix<f64>> {
        self.t.as_ref().ok_or_else(|| {
            Error::Unsupported(
                "this reference has no <A psi_i, A psi_j> matrix (integration-by-parts \
                 assembly); use a pointwise-evaluable operator route"
                    .into(),
            )
        })
    }
}

/// The matrix of the projected operator acting on coefficient columns:
/// `A = G^{-1} C^T`. This is the limit object the data-driven estimate
/// converges to, and the baseline for normalized errors when a closed form
/// exists.
pub fn galerkin_matrix(refm: &ReferenceMatrices) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::<f64, nalgebra::Dyn>::new(refm.g.clone()).ok_or_else(|| {
        Error::Numerical("reference Gram matrix is not positive definite".into())
    })?;
    Ok(chol.solve(&refm.c.transpose()))
}

// ---------------------------------------------------------------------------
// sparse multivariate polynomials (for the closed-form path)
// ---------------------------------------------------------------------------

/// Sparse polynomial: sum of `coeff * x^expo` terms. Small and short-lived;
/// used only to push the generator through monomials symbolically.
#[derive(Debug, Clone)]
struct Poly {
    d: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Poly {
    fn zero(d: usize) -> Self {
        Poly { d, terms: vec![] }
    }

    fn monomial(d: usize, coeff: f64, expo: Vec<u32>) -> Self {
        assert_eq!(expo.len(), d);
        Poly {
            d,
            terms: vec![(coeff, expo)],
        }
        .normalized()
    }

    fn constant(d: usize, c: f64) -> Self {
        Poly::monomial(d, c, vec![0; d])
    }

    fn normalized(mut self) -> Self {
        self.terms.sort_by(|a, b| a.1.cmp(&b.1));
        let mut out: Vec<(f64, Vec<u32>)> = Vec::with_capacity(self.terms.len());
        for (c, e) in self.terms.drain(..) {
            match out.last_mut() {
                Some((lc, le)) if *le == e => *lc += c,
                _ => out.push((c, e)),
            }
        }
        out.retain(|(c, _)| *c != 0.0);
        self.terms = out;
        self
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Poly { d: self.d, terms }.normalized()
    }

    fn scale(&self, s: f64) -> Poly {
        Poly {
            d: self.d,
            terms: self.terms.iter().map(|(c, e)| (c * s, e.clone())).collect(),
        }
        .normalized()
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (ca, ea) in &self.terms {
            for (cb, eb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                terms.push((ca * cb, e));
            }
        }
        Poly { d: self.d, terms }.normalized()
    }

    fn diff(&self, axis: usize) -> Poly {
        let mut terms = Vec::new();
        for (c, e) in &self.terms {
            if e[axis] > 0 {
                let mut e2 = e.clone();
                e2[axis] -= 1;
                terms.push((c * e[axis] as f64, e2));
            }
        }
        Poly { d: self.d, terms }.normalized()
    }
}

/// Mean of `x^expo` over the box under the uniform measure.
fn monomial_mean(bounds: &[(f64, f64)], expo: &[u32]) -> f64 {
    bounds
        .iter()
        .zip(expo)
        .map(|(&(lo, hi), &p)| {
            let q = p as i32 + 1;
            (hi.powi(q) - lo.powi(q)) / (q as f64 * (hi - lo))
        })
        .product()
}

fn poly_mean(bounds: &[(f64, f64)], p: &Poly) -> f64 {
    p.terms
        .iter()
        .map(|(c, e)| c * monomial_mean(bounds, e))
        .sum()
}

/// Polynomial drift/diffusion data for the built-in benchmarks.
struct PolyModel {
    b: Vec<Poly>,
    /// Row-major d x d matrix of Sigma = sigma sigma^T entries; None when
    /// deterministic.
    sigma: Option<Vec<Poly>>,
}

fn polynomial_model(sys: &DynamicalSystem) -> Option<PolyModel> {
    match sys.builtin_id()? {
        BuiltinId::Ode1 => Some(PolyModel {
            b: vec![
                Poly::monomial(2, -0.8, vec![1, 0]),
                Poly::monomial(2, -0.7, vec![0, 1]).add(&Poly::monomial(2, 0.7, vec![2, 0])),
            ],
            sigma: None,
        }),
        BuiltinId::DoubleWell => {
            let s00 = Poly::constant(2, 0.49).add(&Poly::monomial(2, 1.0, vec![2, 0]));
            let s01 = Poly::monomial(2, 0.5, vec![1, 0]);
            let s11 = Poly::constant(2, 0.25);
            Some(PolyModel {
                b: vec![
                    Poly::monomial(2, 4.0, vec![1, 0]).add(&Poly::monomial(2, -4.0, vec![3, 0])),
                    Poly::monomial(2, -2.0, vec![0, 1]),
                ],
                sigma: Some(vec![s00, s01.clone(), s01, s11]),
            })
        }
        BuiltinId::Ou => Some(PolyModel {
            b: vec![Poly::monomial(1, -1.0, vec![1])],
            sigma: Some(vec![Poly::constant(1, 0.5)]),
        }),
    }
}

impl PolyModel {
    /// `L p = b . grad p + 1/2 Tr(Sigma Hess p)`.
    fn generator(&self, p: &Poly) -> Poly {
        let d = self.b.len();
        let mut out = Poly::zero(p.d);
        for j in 0..d {
            out = out.add(&self.b[j].mul(&p.diff(j)));
        }
        if let Some(sig) = &self.sigma {
            for r in 0..d {
                for s in 0..d {
                    out = out.add(&sig[r * d + s].mul(&p.diff(r).diff(s)).scale(0.5));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

fn uniform_bounds<'m>(measure: &'m SamplingMeasure, what: &str) -> Result<&'m [(f64, f64)]> {
    match measure {
        SamplingMeasure::UniformBox(domain) => Ok(&domain.bounds),
        SamplingMeasure::Custom { .. } => Err(Error::Unsupported(format!(
            "{what} reference matrices need the uniform box measure; use the monte-carlo method"
        ))),
    }
}

/// Family-appropriate default panel counts for quadrature references.
fn default_panels(dict: &Dictionary, bounds: &[(f64, f64)]) -> Vec<usize> {
    if let Some(mesh) = dict.fem_mesh() {
        // Panels aligned with mesh cells make the rule exact for hats.
        return mesh.interior.iter().map(|&n| n + 1).collect();
    }
    if let Some((_, theta)) = dict.gaussian_params() {
        return bounds
            .iter()
            .map(|&(lo, hi)| (((hi - lo) / theta).ceil() as usize).clamp(8, 256))
            .collect();
    }
    vec![8; bounds.len()]
}

/// Reference G, C (and T where defined) for one estimator configuration.
///
/// `ibp` must match the assembly mode of the estimator being compared or
/// certified: the integration-by-parts estimators converge to different
/// structure matrices than the pointwise one on non-vanishing boundaries.
pub fn reference_matrices(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    ibp: IbpMode,
    method: &ReferenceMethod,
) -> Result<ReferenceMatrices> {
    if dict.dim() != sys.dim {
        return Err(Error::InvalidArgument(format!(
            "dictionary dimension {} != system dimension {}",
            dict.dim(),
            sys.dim
        )));
    }
    match method {
        ReferenceMethod::Analytic => analytic_reference(dict, sys, op, measure, ibp),
        ReferenceMethod::Quadrature { panels } => {
            let bounds = uniform_bounds(measure, "quadrature")?;
            let panels = panels
                .clone()
                .unwrap_or_else(|| default_panels(dict, bounds));
            quadrature_reference(dict, sys, op, bounds, ibp, &panels)
        }
        ReferenceMethod::MonteCarlo { m_ref, seed } => {
            let opts = AssemblyOptions {
                ibp,
                want_t: matches!(ibp, IbpMode::Off),
                koopman_seed: crate::rng::mix(*seed, &[crate::rng::purpose::DIFFUSION]),
            };
            let sample_seed = crate::rng::mix(*seed, &[crate::rng::purpose::REFERENCE]);
            let gp = empirical_matrices_sampled(dict, sys, op, measure, *m_ref, sample_seed, &opts)?;
            Ok(ReferenceMatrices {
                g: gp.g,
                c: gp.c,
                t: gp.t_hat,
                provenance: Provenance::MonteCarlo {
                    m_ref: *m_ref,
                    seed: *seed,
                },
            })
        }
    }
}

fn analytic_reference(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    ibp: IbpMode,
) -> Result<ReferenceMatrices> {
    let bounds = uniform_bounds(measure, "analytic")?;
    if let Some(exponents) = dict.monomial_exponents() {
        let model = polynomial_model(sys).ok_or_else(|| {
            Error::Unsupported(format!(
                "no polynomial model for system '{}'; use quadrature or monte-carlo",
                sys.name
            ))
        })?;
        if matches!(op, OperatorKind::KoopmanT { .. }) {
            return Err(Error::Unsupported(
                "finite-time operator references have no closed form; use monte-carlo".into(),
            ));
        }
        return analytic_monomials(exponents, &model, bounds, op, ibp);
    }
    if let Some((centers, theta)) = dict.gaussian_params() {
        // Exact Gram via error functions; structure entries ride on a
        // bandwidth-resolving composite rule (spectrally accurate here).
        let g = gaussian_gram_erf(centers, theta, bounds);
        let panels = default_panels(dict, bounds);
        let mut refm = quadrature_reference(dict, sys, op, bounds, ibp, &panels)?;
        refm.g = g;
        refm.provenance = Provenance::Analytic;
        return Ok(refm);
    }
    // Hats: mesh-aligned panels make quadrature exact, which is as closed a
    // form as any.
    let panels = default_panels(dict, bounds);
    quadrature_reference(dict, sys, op, bounds, ibp, &panels)
}

fn analytic_monomials(
    exponents: &[Vec<u32>],
    model: &PolyModel,
    bounds: &[(f64, f64)],
    op: OperatorKind,
    ibp: IbpMode,
) -> Result<ReferenceMatrices> {
    let n = exponents.len();
    let d = bounds.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let e: Vec<u32> = exponents[i]
                .iter()
                .zip(&exponents[j])
                .map(|(a, b)| a + b)
                .collect();
            let v = monomial_mean(bounds, &e);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let basis: Vec<Poly> = exponents
        .iter()
        .map(|e| Poly::monomial(d, 1.0, e.clone()))
        .collect();
    // Koopman-convention C and T; the adjoint route transposes C below.
    let (c_koop, t) = match ibp {
        IbpMode::Off => {
            let images: Vec<Poly> = basis.iter().map(|p| model.generator(p)).collect();
            let mut c = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    c[(i, j)] = poly_mean(bounds, &images[i].mul(&basis[j]));
                }
            }
            let mut t = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = poly_mean(bounds, &images[i].mul(&images[j]));
                    t[(i, j)] = v;
                    t[(j, i)] = v;
                }
            }
            (c, Some(t))
        }
        IbpMode::Dirichlet => {
            let sig = model.sigma.as_ref().ok_or_else(|| {
                Error::InvalidArgument(
                    "Dirichlet-form assembly on a deterministic system has a zero structure \
                     matrix; nothing to reference"
                        .into(),
                )
            })?;
            let mut c = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let mut p = Poly::zero(d);
                    for r in 0..d {
                        for s in 0..d {
                            p = p.add(&sig[r * d + s].mul(&basis[i].diff(r)).mul(&basis[j].diff(s)));
                        }
                    }
                    let v = -0.5 * poly_mean(bounds, &p);
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
            }
            (c, None)
        }
        IbpMode::DriftCorrected => {
            let mut c = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    // (b . grad psi_i) psi_j
                    let mut p = Poly::zero(d);
                    for r in 0..d {
                        p = p.add(&model.b[r].mul(&basis[i].diff(r)));
                    }
                    p = p.mul(&basis[j]);
                    if let Some(sig) = &model.sigma {
                        // -1/2 (grad psi_i)^T Sigma grad psi_j
                        for r in 0..d {
                            for s in 0..d {
                                p = p.add(
                                    &sig[r * d + s]
                                        .mul(&basis[i].diff(r))
                                        .mul(&basis[j].diff(s))
                                        .scale(-0.5),
                                );
                            }
                        }
                        // -1/2 psi_j (div Sigma) . grad psi_i
                        for s in 0..d {
                            let mut div_s = Poly::zero(d);
                            for r in 0..d {
                                div_s = div_s.add(&sig[r * d + s].diff(r));
                            }
                            p = p.add(&div_s.mul(&basis[i].diff(s)).mul(&basis[j]).scale(-0.5));
                        }
                    }
                    c[(i, j)] = poly_mean(bounds, &p);
                }
            }
            (c, None)
        }
    };
    let c = match op {
        OperatorKind::KoopmanGenerator => c_koop,
        OperatorKind::PfGenerator => c_koop.transpose(),
        OperatorKind::KoopmanT { .. } => unreachable!("rejected above"),
    };
    Ok(ReferenceMatrices {
        g,
        c,
        t,
        provenance: Provenance::Analytic,
    })
}

/// Exact Gaussian Gram on a box: per-axis Gaussian-product integrals in
/// terms of the error function, times the off-center attenuation.
fn gaussian_gram_erf(centers: &[Vec<f64>], theta: f64, bounds: &[(f64, f64)]) -> DMatrix<f64> {
    let n = centers.len();
    let mut g = DMatrix::zeros(n, n);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    for i in 0..n {
        for j in 0..=i {
            let mut v = 1.0;
            for (axis, &(lo, hi)) in bounds.iter().enumerate() {
                let (a, b) = (centers[i][axis], centers[j][axis]);
                let m = 0.5 * (a + b);
                let atten = (-(a - b) * (a - b) / (4.0 * theta * theta)).exp();
                let int =
                    0.5 * sqrt_pi * theta * (erf((hi - m) / theta) - erf((lo - m) / theta));
                v *= atten * int / (hi - lo);
            }
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn quadrature_reference(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    bounds: &[(f64, f64)],
    ibp: IbpMode,
    panels: &[usize],
) -> Result<ReferenceMatrices> {
    let quad = tensor_gauss_legendre(bounds, panels);
    let volume: f64 = bounds.iter().map(|&(lo, hi)| hi - lo).product();
    let n = dict.len();
    let d = dict.dim();
    let mut g = DMatrix::zeros(n, n);
    let mut ev = dict.evaluator();
    let mut psi = vec![0.0; n];

    let (c, t) = match ibp {
        IbpMode::Off => {
            // Pointwise operator rows; finite-time data must be
            // deterministic for a quadrature reference to make sense.
            if let OperatorKind::KoopmanT { .. } = op {
                if !sys.is_deterministic() {
                    return Err(Error::Unsupported(
                        "stochastic finite-time data has no quadrature reference; use monte-carlo"
                            .into(),
                    ));
                }
            }
            // C and T are assembled in Koopman convention and transposed
            // for the adjoint route afterwards.
            let row_op = match op {
                OperatorKind::PfGenerator => OperatorKind::KoopmanGenerator,
                other => other,
            };
            let mut op_ev = OperatorEvaluator::new(dict, sys, row_op)?;
            let mut arow = vec![0.0; n];
            let mut c = DMatrix::zeros(n, n);
            let mut t = DMatrix::zeros(n, n);
            for q in 0..quad.len() {
                let x = quad.node(q);
                let w = quad.weight(q) / volume;
                ev.eval(x, &mut psi);
                op_ev.operator_row(x, None, &mut arow)?;
                for i in 0..n {
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
            mirror_lower(&mut g);
            mirror_lower(&mut t);
            let c = match op {
                OperatorKind::PfGenerator => c.transpose(),
                _ => c,
            };
            (c, Some(t))
        }
        IbpMode::Dirichlet | IbpMode::DriftCorrected => {
            let diffusive = !sys.is_deterministic();
            if matches!(ibp, IbpMode::Dirichlet) && !diffusive {
                return Err(Error::InvalidArgument(
                    "Dirichlet-form assembly on a deterministic system has a zero structure \
                     matrix; nothing to reference"
                        .into(),
                ));
            }
            let mut grad = vec![0.0; n * d];
            let mut sig = vec![0.0; d * d];
            let mut bvec = vec![0.0; d];
            let mut div_sig = vec![0.0; d];
            let mut c = DMatrix::zeros(n, n);
            for q in 0..quad.len() {
                let x = quad.node(q);
                let w = quad.weight(q) / volume;
                ev.eval(x, &mut psi);
                ev.gradient(x, &mut grad);
                for i in 0..n {
                    for j in 0..=i {
                        g[(i, j)] += w * psi[i] * psi[j];
                    }
                }
                // -1/2 (grad psi_i)^T Sigma (grad psi_j), both modes.
                if diffusive {
                    sys.sigma_sigma_t(x, &mut sig);
                    for i in 0..n {
                        for j in 0..=i {
                            let gi = &grad[i * d..(i + 1) * d];
                            let gj = &grad[j * d..(j + 1) * d];
                            let mut q2 = 0.0;
                            for r in 0..d {
                                for s in 0..d {
                                    q2 += gi[r] * sig[r * d + s] * gj[s];
                                }
                            }
                            c[(i, j)] += -0.5 * w * q2;
                            if i != j {
                                c[(j, i)] += -0.5 * w * q2;
                            }
                        }
                    }
                }
                if matches!(ibp, IbpMode::DriftCorrected) {
                    sys.drift(x, &mut bvec);
                    if diffusive {
                        sys.sigma_divergence(x, &mut div_sig)?;
                    }
                    for i in 0..n {
                        let gi = &grad[i * d..(i + 1) * d];
                        let bg: f64 = bvec.iter().zip(gi).map(|(a, b)| a * b).sum();
                        let sg: f64 = if diffusive {
                            div_sig.iter().zip(gi).map(|(a, b)| a * b).sum()
                        } else {
                            0.0
                        };
                        for j in 0..n {
                            c[(i, j)] += w * (bg - 0.5 * sg) * psi[j];
                        }
                    }
                }
            }
            mirror_lower(&mut g);
            let c = match op {
                OperatorKind::PfGenerator => c.transpose(),
                _ => c,
            };
            (c, None)
        }
    };
    Ok(ReferenceMatrices {
        g,
        c,
        t,
        provenance: Provenance::Quadrature {
            panels: panels.to_vec(),
        },
    })
}

fn mirror_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_ode, builtin_ou, Domain};
    use approx::assert_relative_eq;

    fn ou_setup(k: usize) -> (Dictionary, DynamicalSystem, SamplingMeasure) {
        let dict = crate::dictionary::monomials(1, k);
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        (dict, sys, measure)
    }

    #[test]
    fn monomial_gram_closed_form() {
        let (dict, sys, measure) = ou_setup(4);
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        // Uniform moments on [-2, 2]: <x^a, x^b> = 2^(a+b)/(a+b+1) for even
        // a+b, zero otherwise.
        for i in 0..5usize {
            for j in 0..5usize {
                let s = i + j;
                let want = if s % 2 == 0 {
                    2f64.powi(s as i32) / (s as f64 + 1.0)
                } else {
                    0.0
                };
                assert_relative_eq!(refm.g[(i, j)], want, max_relative = 1e-14, epsilon = 1e-15);
            }
        }
        assert_eq!(refm.provenance, Provenance::Analytic);
    }

    #[test]
    fn ou_structure_matrix_closed_form() {
        // L x^n = -n x^n + n(n-1)/4 x^(n-2) against uniform moments by hand.
        let (dict, sys, measure) = ou_setup(2);
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        let want = [
            [0.0, 0.0, 0.0],
            [0.0, -4.0 / 3.0, 0.0],
            [-13.0 / 6.0, 0.0, -86.0 / 15.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(refm.c[(i, j)], want[i][j], epsilon = 1e-14);
            }
        }
        // The adjoint-route structure matrix is the transpose with the same
        // Gram and graph matrices.
        let pf = reference_matrices(
            &dict,
            &sys,
            OperatorKind::PfGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        assert_eq!(pf.c, refm.c.transpose());
        assert_eq!(pf.g, refm.g);
        assert_eq!(pf.t, refm.t);
    }

    /// Row map of the generator on monomials up to degree 4:
    /// `L psi_i = sum_j B[i][j] psi_j`.
    fn ou_row_map() -> DMatrix<f64> {
        let mut b = DMatrix::zeros(5, 5);
        for n in 0..5usize {
            b[(n, n)] = -(n as f64);
            if n >= 2 {
                b[(n, n - 2)] = (n * (n - 1)) as f64 / 4.0;
            }
        }
        b
    }

    #[test]
    fn structure_matrix_factors_through_row_map() {
        let (dict, sys, measure) = ou_setup(4);
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        let b = ou_row_map();
        let prod = &b * &refm.g;
        assert!((&refm.c - &prod).norm() < 1e-12);
        // When the generator maps the span into itself the projected matrix
        // is exactly the transposed row map.
        let a = galerkin_matrix(&refm).unwrap();
        assert!((&a - b.transpose()).norm() < 1e-10);
        // T = B G B^T for span-invariant images.
        let t = refm.t_required().unwrap();
        assert!((t - &b * &refm.g * b.transpose()).norm() < 1e-12);
    }

    #[test]
    fn quadrature_agrees_with_closed_form() {
        let (dict, sys, measure) = ou_setup(4);
        for op in [OperatorKind::KoopmanGenerator, OperatorKind::PfGenerator] {
            let exact = reference_matrices(
                &dict,
                &sys,
                op,
                &measure,
                IbpMode::Off,
                &ReferenceMethod::Analytic,
            )
            .unwrap();
            let quad = reference_matrices(
                &dict,
                &sys,
                op,
                &measure,
                IbpMode::Off,
                &ReferenceMethod::Quadrature { panels: None },
            )
            .unwrap();
            assert!((&exact.g - &quad.g).norm() < 1e-10);
            assert!((&exact.c - &quad.c).norm() < 1e-10);
            let (te, tq) = (exact.t_required().unwrap(), quad.t_required().unwrap());
            assert!((te - tq).norm() < 1e-9);
        }
    }

    #[test]
    fn dirichlet_reference_is_symmetric_negative_semidefinite() {
        let (dict, sys, measure) = ou_setup(3);
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Dirichlet,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        assert!(refm.t.is_none());
        assert!((&refm.c - refm.c.transpose()).norm() < 1e-14);
        // -C = 1/2 <Sigma grad, grad> is positive semidefinite.
        let (evs, _) = crate::linalg::symmetric_eigen_sorted(&(-&refm.c));
        assert!(evs[evs.len() - 1] > -1e-12);
        // Hand value: C[1][1] = -1/2 * Sigma * mean((x)'^2) = -1/4.
        assert_relative_eq!(refm.c[(1, 1)], -0.25, epsilon = 1e-14);
        // Matches quadrature assembly of the same weak form.
        let quad = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Dirichlet,
            &ReferenceMethod::Quadrature { panels: None },
        )
        .unwrap();
        assert!((&refm.c - &quad.c).norm() < 1e-11);
    }

    #[test]
    fn gaussian_gram_matches_quadrature() {
        let centers = vec![vec![-1.0], vec![0.5], vec![1.5]];
        let dict = crate::dictionary::gaussians(centers, 0.4).unwrap();
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        let exact = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        let quad = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Quadrature {
                panels: Some(vec![96]),
            },
        )
        .unwrap();
        assert!((&exact.g - &quad.g).norm() < 1e-12);
        assert!((&exact.g - exact.g.transpose()).norm() == 0.0);
        let (evs, _) = crate::linalg::symmetric_eigen_sorted(&exact.g);
        assert!(evs[evs.len() - 1] > 0.0, "Gram must be positive definite");
    }

    #[test]
    fn fem_gram_and_dirichlet_entries_by_hand() {
        use crate::dictionary::MeshSpec;
        let domain = Domain::new(vec![(-2.0, 2.0)]);
        let mesh = MeshSpec::new(&domain, vec![4]).unwrap();
        let h: f64 = 0.8;
        let volume = 4.0;
        let dict = crate::dictionary::fem_linear(mesh);
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Dirichlet,
            &ReferenceMethod::Quadrature { panels: None },
        )
        .unwrap();
        // Tent overlaps: int tent^2 = 2h/3, int tent tent' (neighbors) = h/6,
        // int (tent')^2 = 2/h, int tent_i' tent_{i+1}' = -1/h; means divide
        // by the box volume, the weak form multiplies by -Sigma/2 = -1/4.
        for i in 0..4usize {
            assert_relative_eq!(refm.g[(i, i)], 2.0 * h / 3.0 / volume, epsilon = 1e-13);
            assert_relative_eq!(refm.c[(i, i)], -0.25 * 2.0 / h / volume, epsilon = 1e-13);
            if i + 1 < 4 {
                assert_relative_eq!(refm.g[(i, i + 1)], h / 6.0 / volume, epsilon = 1e-13);
                assert_relative_eq!(refm.c[(i, i + 1)], 0.25 / h / volume, epsilon = 1e-13);
            }
        }
        // Hats two cells apart do not overlap.
        assert_eq!(refm.g[(0, 2)], 0.0);
        assert_eq!(refm.c[(0, 2)], 0.0);
    }

    #[test]
    fn finite_time_identity_at_zero() {
        let dict = crate::dictionary::monomials(2, 2);
        let sys = builtin_ode();
        let measure =
            SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0), (-1.0, 1.0)]));
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanT {
                t: 0.0,
                h: 1e-3,
                n_realizations: 1,
            },
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Quadrature { panels: None },
        )
        .unwrap();
        // Zero-time flow is the identity, so C and T both collapse to G.
        assert!((&refm.c - &refm.g).norm() < 1e-13);
        assert!((refm.t_required().unwrap() - &refm.g).norm() < 1e-13);
    }

    #[test]
    fn monte_carlo_reference_reproducible() {
        let (dict, sys, measure) = ou_setup(3);
        let method = ReferenceMethod::MonteCarlo {
            m_ref: 4096,
            seed: 77,
        };
        let a = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &method,
        )
        .unwrap();
        let b = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &method,
        )
        .unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.c, b.c);
        let other = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::MonteCarlo {
                m_ref: 4096,
                seed: 78,
            },
        )
        .unwrap();
        assert_ne!(a.g, other.g);
        // And it is actually close to the closed form at this sample size.
        let exact = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        assert!((&a.g - &exact.g).norm() / exact.g.norm() < 0.1);
    }

    #[test]
    fn finite_time_closed_form_is_refused() {
        let (dict, sys, measure) = ou_setup(2);
        let err = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanT {
                t: 0.1,
                h: 1e-3,
                n_realizations: 4,
            },
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }
}
