//! Eigenvalues and eigenfunctions of the estimated operator.
//!
//! On span(Psi) with an invertible Gram matrix, the estimated operator *is*
//! the matrix `A` acting on coefficient columns, so operator eigenpairs are
//! ordinary matrix eigenpairs of `A`: no generalized eigenproblem. What this
//! module adds around the eigensolve is the bookkeeping the analysis needs —
//! coefficient vectors normalized in the L2 or graph norm of the basis,
//! residual-checked convergence flags instead of silent failure on defective
//! matrices, deterministic ordering and phase, and trajectory matching when
//! the same spectrum is recomputed along a growing data or dictionary
//! sequence.
//!
//! Eigenvectors come from shifted inverse iteration on the complexified
//! matrix. Repeated eigenvalues are handled by orthogonalizing each iterate
//! against the already-accepted vectors of the same cluster: a genuine
//! multiple eigenvalue then yields an orthogonal basis of its eigenspace,
//! while a defective one leaves the last iterate stuck with a large residual
//! — which is exactly what the `converged` flag reports.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::{EstimationResult, ReferenceMatrices};
use crate::rng::{purpose, stream};

/// Which quadratic form the coefficient vectors are normalized in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// `c^H G c = 1`: unit L2 norm of the eigenfunction.
    L2,
    /// `c^H (G + T) c = 1`: unit graph norm (function plus operator image).
    Graph,
}

/// One eigenpair of the estimated operator on span(Psi).
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: Complex<f64>,
    /// Coefficients of the eigenfunction in the dictionary basis, normalized
    /// per request, with the largest-modulus component rotated to the
    /// positive real axis (ties broken by lowest index).
    pub coeffs: DVector<Complex<f64>>,
    /// `|A c - lambda c|_2` for the returned (scaled) coefficients.
    pub residual: f64,
    /// Whether the residual meets `1e-8 (|lambda| + 1) |c|_2`. False means
    /// the eigenvalue has no further independent eigenvector (a defective or
    /// numerically inseparable cluster); the pair is reported anyway.
    pub converged: bool,
}

const RESIDUAL_GATE: f64 = 1e-8;

/// Eigenpairs of an estimate, normalized against the reference Gram (and,
/// for [`Normalization::Graph`], the reference `<A psi_i, A psi_j>` matrix).
/// Sorted by descending real part, ties by descending imaginary part.
pub fn eigensystem(
    est: &EstimationResult,
    refm: &ReferenceMatrices,
    norm: Normalization,
) -> Result<Vec<EigenPair>> {
    let t = match norm {
        Normalization::L2 => None,
        Normalization::Graph => Some(refm.t_required()?),
    };
    matrix_eigensystem(&est.a, &refm.g, t, norm)
}

/// The workhorse behind [`eigensystem`], usable with any (matrix, Gram)
/// pair — exact projected matrices included.
pub fn matrix_eigensystem(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    t: Option<&DMatrix<f64>>,
    norm: Normalization,
) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "operator matrix is {}x{}, not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if g.shape() != (n, n) {
        return Err(Error::InvalidArgument(format!(
            "Gram matrix shape {:?} does not match operator size {n}",
            g.shape()
        )));
    }
    let norm_matrix = match norm {
        Normalization::L2 => g.clone(),
        Normalization::Graph => {
            let t = t.ok_or_else(|| {
                Error::InvalidArgument(
                    "graph normalization needs the <A psi_i, A psi_j> matrix".into(),
                )
            })?;
            if t.shape() != (n, n) {
                return Err(Error::InvalidArgument(format!(
                    "graph-norm matrix shape {:?} does not match operator size {n}",
                    t.shape()
                )));
            }
            g + t
        }
    };
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut lambdas: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    lambdas.sort_by(|x, y| {
        y.re.total_cmp(&x.re)
            .then_with(|| y.im.total_cmp(&x.im))
    });

    let ac = a.map(|v| Complex::new(v, 0.0));
    let nc = norm_matrix.map(|v| Complex::new(v, 0.0));
    let scale = a.norm() + 1.0;

    let mut pairs: Vec<EigenPair> = Vec::with_capacity(n);
    // Unit-2-norm vectors of the eigenvalue cluster currently being built.
    let mut cluster: Vec<DVector<Complex<f64>>> = Vec::new();
    let mut cluster_lambda = Complex::new(f64::INFINITY, f64::INFINITY);

    for (rank, &lam) in lambdas.iter().enumerate() {
        if (lam - cluster_lambda).norm() > RESIDUAL_GATE * (lam.norm() + 1.0) {
            cluster.clear();
            cluster_lambda = lam;
        }

        let (vec2, residual2) = inverse_iterate(&ac, lam, &cluster, scale, rank);
        cluster.push(vec2.clone());

        // Deterministic phase: largest-modulus component on the positive
        // real axis, first such component on ties.
        let mut pivot = 0;
        for j in 1..n {
            if vec2[j].norm() > vec2[pivot].norm() {
                pivot = j;
            }
        }
        let mut v = vec2;
        let piv = v[pivot];
        if piv.norm() > 0.0 {
            let phase = piv.conj() / piv.norm();
            v *= phase;
        }

        // Requested quadratic-form normalization. The form is positive
        // definite whenever G is (T only adds), so a non-positive value
        // means the Gram itself is defective.
        let q = (v.adjoint() * &nc * &v)[(0, 0)].re;
        if !(q > 0.0) {
            return Err(Error::Numerical(format!(
                "normalization form is not positive on an eigenvector (value {q})"
            )));
        }
        v /= Complex::new(q.sqrt(), 0.0);

        let residual = residual2 / q.sqrt();
        let converged = residual <= RESIDUAL_GATE * (lam.norm() + 1.0) * v.norm();
        pairs.push(EigenPair {
            lambda: lam,
            coeffs: v,
            residual,
            converged,
        });
    }
    Ok(pairs)
}

/// Shifted inverse iteration for `lam`, keeping iterates orthogonal to the
/// vectors already accepted for the same eigenvalue cluster. Returns a
/// unit-2-norm vector and its residual `|A v - lam v|_2`.
fn inverse_iterate(
    ac: &DMatrix<Complex<f64>>,
    lam: Complex<f64>,
    cluster: &[DVector<Complex<f64>>],
    scale: f64,
    rank: usize,
) -> (DVector<Complex<f64>>, f64) {
    let n = ac.nrows();
    let mut rng = stream(0x6569_6765, &[purpose::EIGEN, rank as u64]);
    let mut x = DVector::<Complex<f64>>::from_fn(n, |_, _| {
        Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    orthogonalize(&mut x, cluster);
    if x.norm() == 0.0 {
        // The cluster already spans everything reachable; fall back to the
        // first basis vector so a (flagged) pair is still reported.
        x = DVector::from_element(n, Complex::new(0.0, 0.0));
        x[0] = Complex::new(1.0, 0.0);
    }
    x /= Complex::new(x.norm(), 0.0);

    let mut best = x.clone();
    let mut best_residual = residual_of(ac, lam, &x);

    // Escalating shifts: start essentially at the eigenvalue and back off
    // until the shifted matrix factors.
    let mut shift = 1e-13 * scale;
    'outer: for _ in 0..8 {
        let mut b = ac.clone();
        for i in 0..n {
            b[(i, i)] -= lam + Complex::new(shift, shift);
        }
        let lu = b.lu();
        for _ in 0..30 {
            let Some(mut y) = lu.solve(&x) else {
                shift *= 100.0;
                continue 'outer;
            };
            orthogonalize(&mut y, cluster);
            let ny = y.norm();
            if !ny.is_finite() || ny == 0.0 {
                break 'outer;
            }
            x = y / Complex::new(ny, 0.0);
            let r = residual_of(ac, lam, &x);
            if r < best_residual {
                best_residual = r;
                best = x.clone();
            }
            if r <= 1e-13 * scale {
                break 'outer;
            }
        }
        break;
    }
    (best, best_residual)
}

fn orthogonalize(x: &mut DVector<Complex<f64>>, against: &[DVector<Complex<f64>>]) {
    for v in against {
        let proj = (v.adjoint() * &*x)[(0, 0)];
        x.axpy(-proj, v, Complex::new(1.0, 0.0));
    }
}

fn residual_of(ac: &DMatrix<Complex<f64>>, lam: Complex<f64>, x: &DVector<Complex<f64>>) -> f64 {
    (ac * x - x * lam).norm()
}

/// One eigenvalue followed through a sweep.
#[derive(Debug, Clone)]
pub struct EigenTrajectory {
    /// Rank of this eigenvalue at the first step (0 = leading).
    pub index: usize,
    pub lambdas: Vec<Complex<f64>>,
    pub residuals: Vec<f64>,
}

/// Follow the `k` leading eigenvalues of the first step through all later
/// steps, re-identifying them at each step by proximity: among all
/// (trajectory, candidate) pairs the closest is matched first, then the
/// next-closest among the rest, and so on.
pub fn track_eigenvalues(steps: &[Vec<EigenPair>], k: usize) -> Result<Vec<EigenTrajectory>> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("no steps to track across".into()));
    }
    if let Some(short) = steps.iter().find(|s| s.len() < k) {
        return Err(Error::InvalidArgument(format!(
            "cannot track {k} eigenvalues: a step has only {}",
            short.len()
        )));
    }
    let mut trajectories: Vec<EigenTrajectory> = steps[0][..k]
        .iter()
        .enumerate()
        .map(|(i, p)| EigenTrajectory {
            index: i,
            lambdas: vec![p.lambda],
            residuals: vec![p.residual],
        })
        .collect();

    for step in &steps[1..] {
        // Greedy global matching: repeatedly take the smallest |delta
        // lambda| over unmatched (trajectory, candidate) pairs.
        let mut traj_free: Vec<usize> = (0..k).collect();
        let mut cand_free: Vec<usize> = (0..step.len()).collect();
        let mut assignment = vec![usize::MAX; k];
        while !traj_free.is_empty() {
            let (mut bi, mut bj, mut bd) = (0, 0, f64::INFINITY);
            for (ti, &t) in traj_free.iter().enumerate() {
                let head = *trajectories[t].lambdas.last().expect("nonempty");
                for (ci, &c) in cand_free.iter().enumerate() {
                    let d = (head - step[c].lambda).norm();
                    if d < bd {
                        (bi, bj, bd) = (ti, ci, d);
                    }
                }
            }
            let t = traj_free.swap_remove(bi);
            let c = cand_free.swap_remove(bj);
            assignment[t] = c;
        }
        for (t, traj) in trajectories.iter_mut().enumerate() {
            let p = &step[assignment[t]];
            traj.lambdas.push(p.lambda);
            traj.residuals.push(p.residual);
        }
    }
    Ok(trajectories)
}

/// L2 distance between two eigenfunctions modulo phase:
/// `min over |alpha| = 1 of |f - alpha f_ref|_{L2}`, inner products taken
/// through the Gram matrix.
pub fn eigenfunction_error(
    coeffs: &DVector<Complex<f64>>,
    reference_coeffs: &DVector<Complex<f64>>,
    g: &DMatrix<f64>,
) -> Result<f64> {
    let n = g.nrows();
    if coeffs.len() != n || reference_coeffs.len() != n || g.ncols() != n {
        return Err(Error::InvalidArgument(
            "eigenfunction coefficient / Gram dimensions disagree".into(),
        ));
    }
    let gc = g.map(|v| Complex::new(v, 0.0));
    let cc = (coeffs.adjoint() * &gc * coeffs)[(0, 0)].re;
    let rr = (reference_coeffs.adjoint() * &gc * reference_coeffs)[(0, 0)].re;
    // <f, f_ref>_G; the optimal phase aligns alpha with it.
    let cross = (reference_coeffs.adjoint() * &gc * coeffs)[(0, 0)];
    Ok((cc + rr - 2.0 * cross.norm()).max(0.0).sqrt())
}

/// Trajectories as CSV: `step,index,re,im,residual`, one row per (step,
/// trajectory), rows ordered by step then trajectory index.
pub fn trajectories_to_csv(trajectories: &[EigenTrajectory]) -> String {
    let mut out = String::from("step,index,re,im,residual\n");
    let steps = trajectories.first().map_or(0, |t| t.lambdas.len());
    for s in 0..steps {
        for t in trajectories {
            out.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e}\n",
                s, t.index, t.lambdas[s].re, t.lambdas[s].im, t.residuals[s]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{monomials, OperatorKind};
    use crate::estimator::{
        empirical_matrices_sampled, galerkin_matrix, reference_matrices, solve_estimator,
        AssemblyOptions, IbpMode, ReferenceMethod,
    };
    use crate::systems::{builtin_ou, Domain, SamplingMeasure};

    fn identity(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn zero_matrix_spectrum() {
        let a = DMatrix::zeros(3, 3);
        let pairs = matrix_eigensystem(&a, &identity(3), None, Normalization::L2).unwrap();
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_eq!(p.lambda, Complex::new(0.0, 0.0));
            assert!(p.converged, "residual {}", p.residual);
            assert!((p.coeffs.norm() - 1.0).abs() < 1e-12);
        }
        // The three vectors span everything: mutual orthogonality under the
        // cluster handling.
        for i in 0..3 {
            for j in 0..i {
                let dot = (pairs[i].coeffs.adjoint() * &pairs[j].coeffs)[(0, 0)].norm();
                assert!(dot < 1e-10, "pair {i} vs {j} overlap {dot}");
            }
        }
    }

    #[test]
    fn diagonal_matrix_pairs() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![3.0, -1.0, 2.0]);
        let pairs = matrix_eigensystem(&a, &identity(3), None, Normalization::L2).unwrap();
        let res: Vec<f64> = pairs.iter().map(|p| p.lambda.re).collect();
        assert_eq!(res, vec![3.0, 2.0, -1.0]);
        // Eigenvectors are the basis vectors of the matching slots, phase
        // convention making the big component exactly +1.
        for (p, slot) in pairs.iter().zip([0usize, 2, 1]) {
            for j in 0..3 {
                let expect = if j == slot { 1.0 } else { 0.0 };
                assert!(
                    (p.coeffs[j] - Complex::new(expect, 0.0)).norm() < 1e-10,
                    "component {j} of eigenvector for {}: {}",
                    p.lambda,
                    p.coeffs[j]
                );
            }
            assert!(p.converged);
        }
    }

    #[test]
    fn rotation_generator_conjugate_pair() {
        // [[0, -1], [1, 0]] has eigenvalues +/- i; descending imaginary part
        // puts +i first. With both components of equal modulus the phase
        // convention pins the first one to the positive real axis.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let pairs = matrix_eigensystem(&a, &identity(2), None, Normalization::L2).unwrap();
        assert!((pairs[0].lambda - Complex::new(0.0, 1.0)).norm() < 1e-12);
        assert!((pairs[1].lambda - Complex::new(0.0, -1.0)).norm() < 1e-12);
        for p in &pairs {
            assert!(p.converged, "residual {}", p.residual);
        }
        let c = &pairs[0].coeffs;
        assert!(c[0].im.abs() < 1e-10 && c[0].re > 0.0, "phase broken: {}", c[0]);
        // Eigenvector of +i is (1, -i)/sqrt(2).
        assert!((c[0] - Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)).norm() < 1e-10);
        assert!((c[1] - Complex::new(0.0, -std::f64::consts::FRAC_1_SQRT_2)).norm() < 1e-10);
    }

    fn ou_reference(k: usize) -> crate::estimator::ReferenceMatrices {
        let dict = monomials(1, k);
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap()
    }

    #[test]
    fn ou_projected_generator_spectrum_is_minus_n() {
        // The generator maps each monomial x^n to a combination of x^n and
        // x^{n-2}, so the projected matrix is triangular in the graded basis
        // with diagonal -n: its spectrum is {0, -1, ..., -8} exactly.
        let refm = ou_reference(8);
        let a = galerkin_matrix(&refm).unwrap();
        let pairs = matrix_eigensystem(&a, &refm.g, refm.t.as_ref(), Normalization::L2).unwrap();
        assert_eq!(pairs.len(), 9);
        for (i, p) in pairs.iter().enumerate() {
            assert!(
                (p.lambda.re - (-(i as f64))).abs() < 1e-10,
                "eigenvalue {i}: {}",
                p.lambda
            );
            assert!(p.lambda.im.abs() < 1e-10);
            assert!(p.converged, "pair {i} residual {}", p.residual);
            // L2 normalization holds.
            let gc = refm.g.map(|v| Complex::new(v, 0.0));
            let q = (p.coeffs.adjoint() * &gc * &p.coeffs)[(0, 0)].re;
            assert!((q - 1.0).abs() < 1e-10, "norm {q}");
        }
    }

    #[test]
    fn graph_normalization_is_unit_and_positive() {
        let refm = ou_reference(4);
        let a = galerkin_matrix(&refm).unwrap();
        let t = refm.t.as_ref().unwrap();
        let pairs = matrix_eigensystem(&a, &refm.g, Some(t), Normalization::Graph).unwrap();
        let form = (&refm.g + t).map(|v| Complex::new(v, 0.0));
        for p in &pairs {
            let q = (p.coeffs.adjoint() * &form * &p.coeffs)[(0, 0)].re;
            assert!(q > 0.0);
            assert!((q - 1.0).abs() < 1e-10, "graph norm {q}");
        }
        // Requesting it without T is refused.
        assert!(matches!(
            matrix_eigensystem(&a, &refm.g, None, Normalization::Graph),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn second_eigenfunction_matches_hand_solution() {
        // The lambda = -2 eigenfunction is x^2 + c with
        // L(x^2 + c) = -2 x^2 + s2 = -2 (x^2 + c), i.e. c = -s2/2.
        let refm = ou_reference(4);
        let a = galerkin_matrix(&refm).unwrap();
        let pairs = matrix_eigensystem(&a, &refm.g, None, Normalization::L2).unwrap();
        let p = &pairs[2];
        assert!((p.lambda.re + 2.0).abs() < 1e-10);
        let sys = builtin_ou();
        let mut out = [0.0];
        sys.sigma_sigma_t(&[0.0], &mut out);
        let s2 = out[0];
        // Coefficients proportional to (-s2/2, 0, 1, 0, 0); the ratio
        // constant / quadratic survives normalization and phase.
        let ratio = p.coeffs[0] / p.coeffs[2];
        assert!(
            (ratio - Complex::new(-s2 / 2.0, 0.0)).norm() < 1e-8,
            "ratio {ratio}, expected {}",
            -s2 / 2.0
        );
        for j in [1usize, 3, 4] {
            assert!(p.coeffs[j].norm() / p.coeffs[2].norm() < 1e-8);
        }
    }

    #[test]
    fn defective_block_is_flagged_not_dropped() {
        // A Jordan block has one eigenvector for two equal eigenvalues; the
        // second reported pair cannot converge and must say so.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let pairs = matrix_eigensystem(&a, &identity(2), None, Normalization::L2).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert!((p.lambda - Complex::new(1.0, 0.0)).norm() < 1e-8);
        }
        let converged: Vec<bool> = pairs.iter().map(|p| p.converged).collect();
        assert_eq!(converged.iter().filter(|&&c| c).count(), 1, "{converged:?}");
        let bad = pairs.iter().find(|p| !p.converged).unwrap();
        assert!(bad.residual > 0.1, "flagged residual {}", bad.residual);
    }

    #[test]
    fn tracking_constant_sequence_is_constant() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 1.0, -1.0]);
        let pairs = matrix_eigensystem(&a, &identity(3), None, Normalization::L2).unwrap();
        let steps = vec![pairs.clone(), pairs.clone(), pairs];
        let trajs = track_eigenvalues(&steps, 2).unwrap();
        assert_eq!(trajs.len(), 2);
        for t in &trajs {
            assert_eq!(t.lambdas.len(), 3);
            assert!(t.lambdas.windows(2).all(|w| w[0] == w[1]));
        }
        assert_eq!(trajs[0].lambdas[0], Complex::new(2.0, 0.0));
    }

    fn pairs_from_lambdas(ls: &[Complex<f64>]) -> Vec<EigenPair> {
        ls.iter()
            .map(|&l| EigenPair {
                lambda: l,
                coeffs: DVector::from_element(1, Complex::new(1.0, 0.0)),
                residual: 0.0,
                converged: true,
            })
            .collect()
    }

    #[test]
    fn tracking_matches_minimal_assignment_on_swapped_spectrum() {
        let step0 = [
            Complex::new(5.0, 0.0),
            Complex::new(1.0, 0.0),
            Complex::new(-2.0, 1.0),
        ];
        // Same spectrum, slightly moved, listed in a different order.
        let step1 = [
            Complex::new(1.05, 0.0),
            Complex::new(4.9, 0.0),
            Complex::new(-2.0, 1.04),
        ];
        let steps = vec![pairs_from_lambdas(&step0), pairs_from_lambdas(&step1)];
        let trajs = track_eigenvalues(&steps, 3).unwrap();
        let total: f64 = trajs
            .iter()
            .map(|t| (t.lambdas[1] - t.lambdas[0]).norm())
            .sum();

        // Brute-force minimal assignment over all 6 permutations.
        let mut best = f64::INFINITY;
        let perms = [
            [0usize, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut best_perm = perms[0];
        for perm in perms {
            let cost: f64 = (0..3).map(|i| (step0[i] - step1[perm[i]]).norm()).sum();
            if cost < best {
                best = cost;
                best_perm = perm;
            }
        }
        assert!((total - best).abs() < 1e-12, "greedy {total} vs optimal {best}");
        for (i, t) in trajs.iter().enumerate() {
            assert_eq!(t.lambdas[1], step1[best_perm[i]], "trajectory {i}");
        }
    }

    #[test]
    fn tracking_rejects_short_steps() {
        let steps = vec![
            pairs_from_lambdas(&[Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]),
            pairs_from_lambdas(&[Complex::new(1.0, 0.0)]),
        ];
        assert!(matches!(
            track_eigenvalues(&steps, 2),
            Err(Error::InvalidArgument(_))
        ));
        assert!(track_eigenvalues(&[], 1).is_err());
    }

    #[test]
    fn eigenfunction_error_identities() {
        let g = identity(3);
        let c = DVector::from_vec(vec![
            Complex::new(0.6, 0.0),
            Complex::new(0.0, 0.8),
            Complex::new(0.0, 0.0),
        ]);
        assert!(eigenfunction_error(&c, &c, &g).unwrap() < 1e-14);
        let neg = -c.clone();
        assert!(eigenfunction_error(&c, &neg, &g).unwrap() < 1e-14);
        let rotated = c.map(|v| v * Complex::from_polar(1.0, 0.7));
        assert!(eigenfunction_error(&rotated, &c, &g).unwrap() < 1e-12);
        // Orthonormal pair: distance sqrt(2) regardless of phase freedom.
        let e0 = DVector::from_vec(vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ]);
        let e1 = DVector::from_vec(vec![
            Complex::new(0.0, 0.0),
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 0.0),
        ]);
        let d = eigenfunction_error(&e0, &e1, &g).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-14);
        // Dimension mismatch is an error.
        assert!(eigenfunction_error(&e0, &DVector::zeros(2), &g).is_err());
    }

    #[test]
    fn leading_eigenvalue_error_shrinks_with_data() {
        // Median over seeds of |lambda_1(M) + 1| for the estimated OU
        // generator, at three data sizes: must decrease. A Gaussian
        // dictionary keeps the span non-invariant, so the error is genuine
        // Monte Carlo error, not conditioning noise.
        let centers: Vec<Vec<f64>> = (0..17).map(|i| vec![-2.0 + 0.25 * i as f64]).collect();
        let dict = crate::dictionary::gaussians(centers, 0.25).unwrap();
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Quadrature { panels: None },
        )
        .unwrap();
        // The dictionary is fine enough that the projection bias on the
        // target eigenvalue is far below the Monte Carlo error at these M.
        let a_n = galerkin_matrix(&refm).unwrap();
        let proj = matrix_eigensystem(&a_n, &refm.g, None, Normalization::L2).unwrap();
        assert!((proj[1].lambda + Complex::new(1.0, 0.0)).norm() < 0.01);
        let opts = AssemblyOptions::default();
        let mut medians = Vec::new();
        for e in [10u32, 13, 16] {
            let m = 1usize << e;
            let mut errs: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let gp = empirical_matrices_sampled(
                        &dict,
                        &sys,
                        OperatorKind::KoopmanGenerator,
                        &measure,
                        m,
                        seed,
                        &opts,
                    )
                    .unwrap();
                    let est = solve_estimator(gp, None);
                    let pairs = eigensystem(&est, &refm, Normalization::L2).unwrap();
                    (pairs[1].lambda - Complex::new(-1.0, 0.0)).norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push((errs[9] + errs[10]) / 2.0);
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "medians {medians:?}"
        );
        assert!(medians[2] < 0.05, "final median {}", medians[2]);
    }

    #[test]
    fn weak_inner_products_converge_on_a_test_panel() {
        // Convergence of the lambda = -1 eigenfunction tested weakly: graph
        // inner products against the five basis monomials approach the
        // analytic values as M grows. Median over 10 seeds of the panel
        // maximum must drop.
        let dict = monomials(1, 4);
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        let refm = ou_reference(4);
        let a_ref = galerkin_matrix(&refm).unwrap();
        let exact = matrix_eigensystem(
            &a_ref,
            &refm.g,
            refm.t.as_ref(),
            Normalization::Graph,
        )
        .unwrap();
        let f_ref = &exact[1].coeffs;
        let form = (&refm.g + refm.t.as_ref().unwrap()).map(|v| Complex::new(v, 0.0));
        let panel: Vec<DVector<Complex<f64>>> = (0..5)
            .map(|j| {
                let mut v = DVector::from_element(5, Complex::new(0.0, 0.0));
                v[j] = Complex::new(1.0, 0.0);
                v
            })
            .collect();
        let opts = AssemblyOptions::default();
        let mut medians = Vec::new();
        for e in [10u32, 14] {
            let m = 1usize << e;
            let mut errs: Vec<f64> = (0..10u64)
                .map(|seed| {
                    let gp = empirical_matrices_sampled(
                        &dict,
                        &sys,
                        OperatorKind::KoopmanGenerator,
                        &measure,
                        m,
                        seed,
                        &opts,
                    )
                    .unwrap();
                    let est = solve_estimator(gp, None);
                    let pairs = eigensystem(&est, &refm, Normalization::Graph).unwrap();
                    let diff = &pairs[1].coeffs - f_ref;
                    panel
                        .iter()
                        .map(|gv| (gv.adjoint() * &form * &diff)[(0, 0)].norm())
                        .fold(0.0f64, f64::max)
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push((errs[4] + errs[5]) / 2.0);
        }
        assert!(medians[1] < medians[0], "medians {medians:?}");
    }

    #[test]
    fn csv_layout() {
        let trajs = vec![
            EigenTrajectory {
                index: 0,
                lambdas: vec![Complex::new(1.0, 0.5), Complex::new(0.9, 0.4)],
                residuals: vec![1e-12, 2e-12],
            },
            EigenTrajectory {
                index: 1,
                lambdas: vec![Complex::new(-1.0, 0.0), Complex::new(-1.1, 0.0)],
                residuals: vec![1e-12, 1e-12],
            },
        ];
        let csv = trajectories_to_csv(&trajs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,index,re,im,residual");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,1.0000000000000000e0,5.0000000000000000e-1,"));
        assert!(lines[4].starts_with("1,1,-1.1000000000000001e0,0.0000000000000000e0,"));
        // Every row parses back.
        for line in &lines[1..] {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 5);
            assert!(cells[2].parse::<f64>().is_ok());
        }
    }
}
