//! Measurement noise on the evaluation data.
//!
//! The model perturbs the raw evaluations, not the assembled matrices: each
//! sample point contributes `psi_n(x_m) + eta[m][n]` on the basis slot and
//! `A psi_n(x_m) + xi[m][n]` on the operator slot, with one independent draw
//! per `(m, n, slot)`. The perturbed Gram and structure matrices are then
//! the usual empirical products of these rows, so everything downstream
//! (pseudoinverse, solve, error norms) is oblivious to the noise.
//!
//! Draws come from per-sample streams keyed by the global sample index, so
//! the result is independent of blocking and thread count, and a given
//! `(seed, sigma)` pair perturbs a data set identically every time. The
//! draws are standard normals scaled by `sigma`; the same seed at two noise
//! levels yields proportional perturbations, which makes paired comparisons
//! across `sigma` meaningful.
//!
//! An inactive model (kind `None`, or `sigma == 0`) routes through the
//! unhooked assembly and is bit-identical to the noiseless estimator.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bounds::{noisy_required_m, BoundKind, BoundReport, OperatorConstants};
use crate::dictionary::{Dictionary, OperatorKind};
use crate::error::{Error, Result};
use crate::estimator::{
    empirical_matrices, empirical_matrices_hooked, empirical_matrices_sampled,
    empirical_matrices_sampled_hooked, AssemblyOptions, GramPair, IbpMode,
};
use crate::rng::{purpose, stream};
use crate::systems::{DynamicalSystem, PointSet, SamplingMeasure};

/// Additive evaluation noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    GaussianIid {
        sigma: f64,
        /// Keep structurally zero hat-function evaluations exactly zero and
        /// perturb only the entries inside the local support. Matched to how
        /// sparse bases are evaluated in practice (the zeros are known, not
        /// measured); ignored by the dense families.
        fem_sparse: bool,
    },
}

impl NoiseModel {
    /// Gaussian model with the sparse-basis convention switched on.
    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel::GaussianIid {
            sigma,
            fem_sparse: true,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::GaussianIid { sigma, .. } => *sigma,
        }
    }

    /// Whether the model perturbs anything at all.
    pub fn is_active(&self) -> bool {
        match self {
            NoiseModel::None => false,
            NoiseModel::GaussianIid { sigma, .. } => *sigma != 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let NoiseModel::GaussianIid { sigma, .. } = self {
            if !sigma.is_finite() || *sigma < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "noise level must be a finite nonnegative number, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

fn check_noise_assembly(model: &NoiseModel, opts: &AssemblyOptions) -> Result<()> {
    model.validate()?;
    if model.is_active() && !matches!(opts.ibp, IbpMode::Off) {
        return Err(Error::InvalidArgument(
            "the noise model perturbs pointwise evaluations; weak-form assemblies have none"
                .into(),
        ));
    }
    Ok(())
}

/// Hook body shared by both entry points: one stream per sample, `N` draws
/// for the basis row followed by `N` draws for the operator row. The sparse
/// mask skips *application*, never the draw, so the stream layout is the
/// same with and without it.
fn perturb_rows(
    seed: u64,
    sigma: f64,
    sparse: bool,
    idx: usize,
    psi: &mut [f64],
    arow: &mut [f64],
) {
    let mut rng = stream(seed, &[purpose::NOISE, idx as u64]);
    for v in psi.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        if !sparse || *v != 0.0 {
            *v += sigma * e;
        }
    }
    for v in arow.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        if !sparse || *v != 0.0 {
            *v += sigma * e;
        }
    }
}

/// Empirical matrices from noisy evaluations of explicit points.
pub fn perturbed_matrices(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    points: &PointSet,
    model: &NoiseModel,
    noise_seed: u64,
    opts: &AssemblyOptions,
) -> Result<GramPair> {
    check_noise_assembly(model, opts)?;
    if !model.is_active() {
        return empirical_matrices(dict, sys, op, points, opts);
    }
    let sigma = model.sigma();
    let sparse = matches!(model, NoiseModel::GaussianIid { fem_sparse: true, .. })
        && dict.family_name() == "fem";
    let hook = move |idx: usize, psi: &mut [f64], arow: &mut [f64]| {
        perturb_rows(noise_seed, sigma, sparse, idx, psi, arow)
    };
    empirical_matrices_hooked(dict, sys, op, points, opts, &hook)
}

/// Streaming variant: points are generated block-by-block from the measure,
/// exactly as [`perturbed_matrices`] over the materialized set.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_matrices_sampled(
    dict: &Dictionary,
    sys: &DynamicalSystem,
    op: OperatorKind,
    measure: &SamplingMeasure,
    m: usize,
    sample_seed: u64,
    model: &NoiseModel,
    noise_seed: u64,
    opts: &AssemblyOptions,
) -> Result<GramPair> {
    check_noise_assembly(model, opts)?;
    if !model.is_active() {
        return empirical_matrices_sampled(dict, sys, op, measure, m, sample_seed, opts);
    }
    let sigma = model.sigma();
    let sparse = matches!(model, NoiseModel::GaussianIid { fem_sparse: true, .. })
        && dict.family_name() == "fem";
    let hook = move |idx: usize, psi: &mut [f64], arow: &mut [f64]| {
        perturb_rows(noise_seed, sigma, sparse, idx, psi, arow)
    };
    empirical_matrices_sampled_hooked(dict, sys, op, measure, m, sample_seed, opts, &hook)
}

/// Truncation level and admissibility probability for Gaussian iid noise:
/// `gamma_tilde = sigma^2 gamma` and
/// `p_tilde = P[|(eta, xi)|^2 <= gamma_tilde]`.
///
/// The squared norm of the `2N` draws is `sigma^2 chi^2_{2N}`, so `p_tilde`
/// is the chi-squared CDF at `gamma` — independent of `sigma`. At the
/// canonical level `gamma = 2N` the classical tail bound
/// `p_tilde >= 1 - (2/e)^{N/2}` is returned instead of the exact CDF, as
/// the certified lower bound.
pub fn gaussian_admissibility(n: usize, sigma: f64, gamma: f64) -> (f64, f64) {
    let gamma_tilde = sigma * sigma * gamma;
    if sigma == 0.0 {
        return (0.0, 1.0);
    }
    let p_tilde = if gamma == 2.0 * n as f64 {
        1.0 - (2.0 / std::f64::consts::E).powf(n as f64 / 2.0)
    } else {
        ChiSquared::new(2.0 * n as f64)
            .expect("2N degrees of freedom is positive")
            .cdf(gamma)
    };
    (gamma_tilde, p_tilde)
}

fn check_p_pair(p: f64, p_tilde: f64) -> Result<()> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {p}"
        )));
    }
    if !(p < p_tilde && p_tilde <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise admissibility p_tilde = {p_tilde} must exceed the target confidence p = {p} \
             (and be at most 1)"
        )));
    }
    Ok(())
}

/// Projection certificate under evaluation noise: the sample-size formula
/// inflates `gamma` by `gamma_tilde` and divides the confidence by
/// `p_tilde`; the certified radius is unchanged. With `gamma_tilde = 0`,
/// `p_tilde = 1` this is exactly the noiseless certificate.
pub fn noisy_projection_certificate(
    consts: &OperatorConstants,
    delta: f64,
    p: f64,
    p_tilde: f64,
    gamma_tilde: f64,
) -> Result<BoundReport> {
    check_p_pair(p, p_tilde)?;
    if !(delta > 0.0) || delta >= consts.validity_limit() {
        return Err(Error::Validity(format!(
            "delta = {delta} outside the resolvent validity range (0, {})",
            consts.validity_limit()
        )));
    }
    if !(gamma_tilde >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise truncation level must be nonnegative, got {gamma_tilde}"
        )));
    }
    let m = noisy_required_m(consts, delta, p, p_tilde, gamma_tilde)?;
    Ok(BoundReport {
        kind: BoundKind::PropNoise,
        n: consts.n,
        delta,
        epsilon: None,
        p,
        required_m: m,
        radius: 2.0 * consts.rho() * consts.norm_g_inv * delta,
    })
}

/// Epsilon-targeted schedule under noise: derives the same
/// `delta_N = epsilon / (2 rho |G^-1|)` and applies the noisy sample-size
/// formula at that deviation.
pub fn noisy_oc_schedule(
    consts: &OperatorConstants,
    epsilon: f64,
    p: f64,
    p_tilde: f64,
    gamma_tilde: f64,
) -> Result<BoundReport> {
    check_p_pair(p, p_tilde)?;
    let rho = consts.rho();
    if !(epsilon > 0.0) || epsilon >= rho {
        return Err(Error::Validity(format!(
            "target epsilon = {epsilon} must lie in (0, rho = {rho})"
        )));
    }
    if !(gamma_tilde >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise truncation level must be nonnegative, got {gamma_tilde}"
        )));
    }
    let delta = epsilon / (2.0 * rho * consts.norm_g_inv);
    let m = noisy_required_m(consts, delta, p, p_tilde, gamma_tilde)?;
    Ok(BoundReport {
        kind: BoundKind::ThmOrderConvergenceNoise,
        n: consts.n,
        delta,
        epsilon: Some(epsilon),
        p,
        required_m: m,
        radius: epsilon,
    })
}

/// Mean perturbed Gram diagonal excess: Gaussian iid noise adds `sigma^2 I`
/// in expectation. Exposed for diagnostics and the harness bias column.
pub fn expected_gram_bias(model: &NoiseModel) -> f64 {
    let s = model.sigma();
    s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::bounds::projection_error_certificate;
    use crate::dictionary::{fem_linear, monomials, MeshSpec};
    use crate::estimator::{
        galerkin_matrix, matrix_error, reference_matrices, solve_estimator, MatrixNorm,
        ReferenceMethod,
    };
    use crate::systems::{builtin_ode, builtin_ou, sample_points, Domain};

    fn ou_1d() -> (DynamicalSystem, SamplingMeasure) {
        let sys = builtin_ou();
        let measure = SamplingMeasure::uniform(&Domain::new(vec![(-2.0, 2.0)]));
        (sys, measure)
    }

    #[test]
    fn inactive_models_are_bitwise_noiseless() {
        let dict = monomials(1, 3);
        let (sys, measure) = ou_1d();
        let points = sample_points(&measure, 4096, 21);
        let opts = AssemblyOptions {
            want_t: true,
            ..AssemblyOptions::default()
        };
        let clean =
            empirical_matrices(&dict, &sys, OperatorKind::KoopmanGenerator, &points, &opts)
                .unwrap();
        for model in [
            NoiseModel::None,
            NoiseModel::GaussianIid {
                sigma: 0.0,
                fem_sparse: true,
            },
        ] {
            let gp = perturbed_matrices(
                &dict,
                &sys,
                OperatorKind::KoopmanGenerator,
                &points,
                &model,
                999,
                &opts,
            )
            .unwrap();
            assert_eq!(gp.g, clean.g);
            assert_eq!(gp.c, clean.c);
            assert_eq!(gp.t_hat, clean.t_hat);
        }
    }

    #[test]
    fn streamed_noisy_assembly_matches_points_and_is_seeded() {
        let dict = monomials(1, 2);
        let (sys, measure) = ou_1d();
        let model = NoiseModel::gaussian(0.05);
        let opts = AssemblyOptions::default();
        let m = 10_000;
        let (sample_seed, noise_seed) = (4, 40);
        let points = sample_points(&measure, m, sample_seed);
        let a = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &model,
            noise_seed,
            &opts,
        )
        .unwrap();
        let b = perturbed_matrices_sampled(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            m,
            sample_seed,
            &model,
            noise_seed,
            &opts,
        )
        .unwrap();
        assert_eq!(a.g, b.g);
        assert_eq!(a.c, b.c);
        let clean =
            empirical_matrices(&dict, &sys, OperatorKind::KoopmanGenerator, &points, &opts)
                .unwrap();
        assert_ne!(a.g, clean.g);
        let other = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &model,
            noise_seed + 1,
            &opts,
        )
        .unwrap();
        assert_ne!(a.g, other.g);
    }

    #[test]
    fn gram_diagonal_bias_is_sigma_squared() {
        let dict = monomials(1, 2);
        let (sys, measure) = ou_1d();
        let sigma = 0.1;
        let model = NoiseModel::gaussian(sigma);
        let m = 200_000;
        let points = sample_points(&measure, m, 8);
        let opts = AssemblyOptions::default();
        let noisy = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &model,
            80,
            &opts,
        )
        .unwrap();
        let clean =
            empirical_matrices(&dict, &sys, OperatorKind::KoopmanGenerator, &points, &opts)
                .unwrap();
        let bias = &noisy.g - &clean.g;
        let expected = expected_gram_bias(&model);
        for i in 0..3 {
            assert!(
                (bias[(i, i)] - expected).abs() < 4e-3,
                "diagonal bias {} at {i}",
                bias[(i, i)]
            );
            for j in 0..i {
                assert!(bias[(i, j)].abs() < 4e-3, "off-diagonal bias {}", bias[(i, j)]);
            }
        }
    }

    #[test]
    fn perturbation_norm_scales_with_sigma() {
        // |G_noisy - G_clean| stays within the sup-bound scale 10 sigma
        // sqrt(gamma) across seeds.
        let dict = monomials(1, 4);
        let (sys, measure) = ou_1d();
        let domain = Domain::new(vec![(-2.0, 2.0)]);
        let gamma = dict.gamma_identity(&domain);
        let sigma = 1e-3;
        let model = NoiseModel::gaussian(sigma);
        let opts = AssemblyOptions::default();
        let m = 1 << 16;
        for seed in 0..20u64 {
            let points = sample_points(&measure, m, 100 + seed);
            let noisy = perturbed_matrices(
                &dict,
                &sys,
                OperatorKind::KoopmanGenerator,
                &points,
                &model,
                200 + seed,
                &opts,
            )
            .unwrap();
            let clean =
                empirical_matrices(&dict, &sys, OperatorKind::KoopmanGenerator, &points, &opts)
                    .unwrap();
            let dev = crate::linalg::spectral_norm(&(&noisy.g - &clean.g));
            assert!(
                dev <= 10.0 * sigma * gamma.sqrt(),
                "seed {seed}: deviation {dev}"
            );
        }
    }

    #[test]
    fn noise_draws_are_centered() {
        // Empirical mean of the per-sample basis-slot draws over 1e5 samples
        // stays within four standard errors of zero.
        let (n, sigma, samples) = (5usize, 0.3, 100_000usize);
        let mut mean = vec![0.0; n];
        for idx in 0..samples {
            let mut rng = stream(7, &[purpose::NOISE, idx as u64]);
            for slot in mean.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *slot += sigma * e;
            }
        }
        let norm: f64 = mean.iter().map(|v| v * v).sum::<f64>().sqrt() / samples as f64;
        assert!(norm <= 4.0 * sigma * (n as f64).sqrt() / (samples as f64).sqrt());
    }

    #[test]
    fn sparse_convention_preserves_structural_zeros() {
        // 2D hats on the deterministic system: pointwise rows exist and most
        // evaluations vanish identically. With the sparse convention those
        // zeros must survive the noise; without it they must not.
        let sys = builtin_ode();
        let domain = Domain::new(vec![(-2.0, 2.0), (-1.0, 1.0)]);
        let mesh = MeshSpec::new(&domain, vec![3, 3]).unwrap();
        let dict = fem_linear(mesh);
        // All points inside one corner cell: hats centered far away never
        // overlap them.
        let points = PointSet::new(
            2,
            vec![-1.8, -0.9, -1.85, -0.85, -1.75, -0.95, -1.9, -0.8],
        );
        let opts = AssemblyOptions::default();
        let sparse = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &NoiseModel::GaussianIid {
                sigma: 0.1,
                fem_sparse: true,
            },
            5,
            &opts,
        )
        .unwrap();
        let dense = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &NoiseModel::GaussianIid {
                sigma: 0.1,
                fem_sparse: false,
            },
            5,
            &opts,
        )
        .unwrap();
        let clean = empirical_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &opts,
        )
        .unwrap();
        // The far-corner hat (last node) never sees these points.
        let far = dict.len() - 1;
        assert_eq!(clean.g[(far, far)], 0.0);
        assert_eq!(sparse.g[(far, far)], 0.0);
        assert_ne!(dense.g[(far, far)], 0.0);
        // Noise still lands on the active hat.
        let near = 0;
        assert_ne!(sparse.g[(near, near)], clean.g[(near, near)]);
    }

    #[test]
    fn weak_form_assembly_rejects_active_noise() {
        let dict = monomials(1, 2);
        let (sys, measure) = ou_1d();
        let points = sample_points(&measure, 64, 1);
        let opts = AssemblyOptions {
            ibp: IbpMode::Dirichlet,
            ..AssemblyOptions::default()
        };
        let err = perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &NoiseModel::gaussian(0.1),
            1,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        // Inactive noise passes through to the weak assembly.
        assert!(perturbed_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &points,
            &NoiseModel::None,
            1,
            &opts,
        )
        .is_ok());
    }

    #[test]
    fn admissibility_constants() {
        // sigma = 0 is always admissible.
        assert_eq!(gaussian_admissibility(9, 0.0, 18.0), (0.0, 1.0));
        // Canonical level: the classical tail bound, checked by hand.
        let (gt, pt) = gaussian_admissibility(45, 0.1, 90.0);
        assert!((gt - 0.9).abs() < 1e-15);
        let hand = 1.0 - (2.0f64 / std::f64::consts::E).powf(22.5);
        assert!((pt - hand).abs() < 1e-15);
        assert!(pt > 0.998 && pt < 1.0);
        // Off-canonical level: the exact chi-squared value, cross-checked
        // against Monte Carlo.
        let n = 3usize;
        let gamma = 9.0; // != 2N = 6
        let (_, pt) = gaussian_admissibility(n, 0.2, gamma);
        let mut rng = stream(99, &[1]);
        let trials = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut s = 0.0;
            for _ in 0..2 * n {
                let z: f64 = rng.sample(StandardNormal);
                s += z * z;
            }
            if s <= gamma {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        let slack = 3.0 * (pt * (1.0 - pt) / trials as f64).sqrt();
        assert!(
            (freq - pt).abs() <= slack,
            "chi-squared CDF {pt} vs Monte Carlo {freq}"
        );
    }

    #[test]
    fn noisy_certificates_collapse_and_double() {
        let consts = OperatorConstants {
            n: 5,
            norm_g: 4.0,
            norm_g_inv: 2.0,
            norm_c: 3.0,
            norm_t: 6.0,
            gamma: 18.0,
        };
        let (delta, p) = (0.01, 0.9);
        let plain = projection_error_certificate(&consts, delta, p).unwrap();
        let collapsed = noisy_projection_certificate(&consts, delta, p, 1.0, 0.0).unwrap();
        assert_eq!(plain.required_m, collapsed.required_m);
        assert_eq!(plain.radius, collapsed.radius);
        assert_eq!(collapsed.kind, BoundKind::PropNoise);

        // Noise at the signal's own sup level doubles the data need exactly
        // (holding the confidence term fixed at p_tilde = 1)...
        let doubled = noisy_projection_certificate(&consts, delta, p, 1.0, consts.gamma).unwrap();
        let ratio = doubled.required_m as f64 / plain.required_m as f64;
        assert!((1.99..2.01).contains(&ratio), "ratio {ratio}");
        // ... and a realistic admissibility probability below 1 costs
        // strictly more on top, through the rescaled confidence.
        let (_, p_tilde) = gaussian_admissibility(5, 1.0, consts.gamma);
        assert!(p_tilde < 1.0);
        let realistic =
            noisy_projection_certificate(&consts, delta, p, p_tilde, consts.gamma).unwrap();
        assert!(realistic.required_m > doubled.required_m);

        assert!(matches!(
            noisy_projection_certificate(&consts, delta, 0.9, 0.85, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            noisy_projection_certificate(&consts, 10.0, 0.9, 1.0, 0.0),
            Err(Error::Validity(_))
        ));

        let sched = noisy_oc_schedule(&consts, 0.5, p, p_tilde, consts.gamma).unwrap();
        assert_eq!(sched.kind, BoundKind::ThmOrderConvergenceNoise);
        assert_eq!(sched.radius, 0.5);
        let plain_sched = crate::bounds::oc_schedule(&consts, 0.5, p).unwrap();
        assert!(sched.required_m > plain_sched.required_m);
    }

    /// Normalized spectral error of the noisy estimate against the analytic
    /// projected matrix, averaged over seeds.
    fn mean_error_at(
        dict: &Dictionary,
        sys: &DynamicalSystem,
        measure: &SamplingMeasure,
        a_ref: &DMatrix<f64>,
        m: usize,
        sigma: f64,
        seeds: std::ops::Range<u64>,
    ) -> f64 {
        let model = if sigma == 0.0 {
            NoiseModel::None
        } else {
            NoiseModel::gaussian(sigma)
        };
        let opts = AssemblyOptions::default();
        let mut total = 0.0;
        let count = seeds.end - seeds.start;
        for seed in seeds {
            let gp = perturbed_matrices_sampled(
                dict,
                sys,
                OperatorKind::KoopmanGenerator,
                measure,
                m,
                seed,
                &model,
                seed.wrapping_add(1 << 32),
                &opts,
            )
            .unwrap();
            let est = solve_estimator(gp, None);
            let (_, rel) = matrix_error(&est.a, a_ref, MatrixNorm::Spectral).unwrap();
            total += rel;
        }
        total / count as f64
    }

    #[test]
    fn degradation_is_monotone_in_sigma() {
        // The generator maps this span into itself, so the noiseless error
        // is conditioning-level and every noise increment must show.
        let dict = monomials(1, 4);
        let (sys, measure) = ou_1d();
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        let a_ref = galerkin_matrix(&refm).unwrap();
        let m = 1 << 13;
        let mut last = -1.0;
        for sigma in [0.0, 1e-3, 1e-2, 1e-1] {
            let avg = mean_error_at(&dict, &sys, &measure, &a_ref, m, sigma, 0..20);
            assert!(
                avg >= last,
                "average error fell from {last} to {avg} at sigma {sigma}"
            );
            last = avg;
        }
    }

    #[test]
    fn high_noise_error_plateaus_in_m() {
        // At sigma = 0.1 the noise floor dominates: the log-log slope over
        // the last decade of M must be essentially flat.
        let dict = monomials(1, 4);
        let (sys, measure) = ou_1d();
        let refm = reference_matrices(
            &dict,
            &sys,
            OperatorKind::KoopmanGenerator,
            &measure,
            IbpMode::Off,
            &ReferenceMethod::Analytic,
        )
        .unwrap();
        let a_ref = galerkin_matrix(&refm).unwrap();
        let ms: Vec<usize> = (11..=15).map(|e| 1usize << e).collect();
        let mut pts = Vec::new();
        for &m in &ms {
            let avg = mean_error_at(&dict, &sys, &measure, &a_ref, m, 0.1, 0..20);
            pts.push(((m as f64).log2(), avg.log2()));
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(slope >= -0.15, "plateau slope {slope}");
    }
}
