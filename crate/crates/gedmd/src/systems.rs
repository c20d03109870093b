//! Benchmark dynamical systems, trajectory integration, and exact generator
//! application.
//!
//! A system is a drift field `b`, an optional diffusion field `sigma`, and an
//! axis-aligned box domain. For the stochastic differential equation
//!
//! ```text
//!     dX_t = b(X_t) dt + sigma(X_t) dW_t,        Sigma := sigma sigma^T,
//! ```
//!
//! the generator of the Koopman semigroup acts on a C^2 observable f as
//!
//! ```text
//!     L f = b . grad f + 1/2 Tr(Sigma Hess f),
//! ```
//!
//! and its formal adjoint (the Perron-Frobenius generator, density side) as
//!
//! ```text
//!     L* g = -b . grad g - (div b) g
//!            + (div Sigma) . grad g + 1/2 (sum_ij d_i d_j Sigma_ij) g
//!            + 1/2 Tr(Sigma Hess g),
//! ```
//!
//! where `(div Sigma)_j = sum_i d_i Sigma_ij`. The three builtin benchmarks
//! keep all of these coefficient fields polynomial, so the module carries
//! them analytically.
//!
//! Three builtins are provided:
//!
//! * `builtin_ode`       — planar ODE, b = (-0.8 x1, -0.7 (x2 - x1^2)), deterministic;
//! * `builtin_double_well` — 2D double-well SDE with state-dependent diffusion;
//! * `builtin_ou`        — 1D Ornstein-Uhlenbeck, b = -x, sigma = sqrt(1/2).

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// Axis-aligned box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    /// Per-axis `(lo, hi)` bounds.
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        assert!(
            bounds.iter().all(|&(lo, hi)| hi > lo),
            "degenerate domain axis"
        );
        Domain { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi)
    }

    /// All 2^d corner points, in lexicographic (lo-first) order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..(1usize << d))
            .map(|mask| {
                (0..d)
                    .map(|i| {
                        if mask >> i & 1 == 0 {
                            self.bounds[i].0
                        } else {
                            self.bounds[i].1
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Flat, row-major storage for M points in R^d.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        PointSet { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }
}

type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum SystemKind {
    /// b = (g x1, d (x2 - x1^2)) with g = -0.8, d = -0.7. Deterministic.
    Ode1,
    /// b = (4 x1 - 4 x1^3, -2 x2), sigma = [[0.7, x1], [0, 0.5]].
    DoubleWell,
    /// b = -x, sigma = sqrt(1/2).
    Ou,
    /// User-supplied fields. `sigma_cols` is the number of Wiener channels.
    Custom {
        drift: VectorField,
        sigma: Option<(usize, VectorField)>,
    },
}

/// A drift/diffusion pair on a box domain. Immutable; cheap to clone.
#[derive(Clone)]
pub struct DynamicalSystem {
    pub name: String,
    pub dim: usize,
    pub domain: Domain,
    kind: SystemKind,
    /// Free-form note (e.g. the known invariant distribution).
    pub note: Option<String>,
    diffusion_frozen: bool,
}

const ODE1_GAMMA: f64 = -0.8;
const ODE1_DELTA: f64 = -0.7;

/// Planar polynomial ODE benchmark.
pub fn builtin_ode() -> DynamicalSystem {
    DynamicalSystem {
        name: "ode1".into(),
        dim: 2,
        domain: Domain::new(vec![(-2.0, 2.0), (-1.0, 1.0)]),
        kind: SystemKind::Ode1,
        note: None,
        diffusion_frozen: false,
    }
}

/// Two-dimensional double-well SDE with state-dependent diffusion.
pub fn builtin_double_well() -> DynamicalSystem {
    DynamicalSystem {
        name: "double_well".into(),
        dim: 2,
        domain: Domain::new(vec![(-2.0, 2.0), (-1.0, 1.0)]),
        kind: SystemKind::DoubleWell,
        note: None,
        diffusion_frozen: false,
    }
}

/// One-dimensional Ornstein-Uhlenbeck process.
pub fn builtin_ou() -> DynamicalSystem {
    DynamicalSystem {
        name: "ou".into(),
        dim: 1,
        domain: Domain::new(vec![(-2.0, 2.0)]),
        kind: SystemKind::Ou,
        note: Some("invariant distribution N(0, 1/4)".into()),
        diffusion_frozen: false,
    }
}

/// Build a system from user closures. `sigma` writes the d x r diffusion
/// matrix in row-major order.
pub fn custom_system(
    name: &str,
    domain: Domain,
    drift: VectorField,
    sigma: Option<(usize, VectorField)>,
) -> DynamicalSystem {
    DynamicalSystem {
        name: name.into(),
        dim: domain.dim(),
        domain,
        kind: SystemKind::Custom { drift, sigma },
        note: None,
        diffusion_frozen: false,
    }
}

/// Identifies the built-in benchmark systems, for code paths (closed-form
/// reference matrices, polynomial generator action) that exist only for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinId {
    Ode1,
    DoubleWell,
    Ou,
}

impl DynamicalSystem {
    /// Which built-in benchmark this is, if any.
    pub fn builtin_id(&self) -> Option<BuiltinId> {
        match &self.kind {
            SystemKind::Ode1 => Some(BuiltinId::Ode1),
            SystemKind::DoubleWell => Some(BuiltinId::DoubleWell),
            SystemKind::Ou => Some(BuiltinId::Ou),
            SystemKind::Custom { .. } => None,
        }
    }

    /// Evaluate the drift field into `out` (length d).
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            SystemKind::Ode1 => {
                out[0] = ODE1_GAMMA * x[0];
                out[1] = ODE1_DELTA * (x[1] - x[0] * x[0]);
            }
            SystemKind::DoubleWell => {
                out[0] = 4.0 * x[0] - 4.0 * x[0] * x[0] * x[0];
                out[1] = -2.0 * x[1];
            }
            SystemKind::Ou => out[0] = -x[0],
            SystemKind::Custom { drift, .. } => drift(x, out),
        }
    }

    /// Number of Wiener channels r, or 0 for deterministic systems.
    pub fn sigma_cols(&self) -> usize {
        if self.diffusion_frozen {
            return 0;
        }
        match &self.kind {
            SystemKind::Ode1 => 0,
            SystemKind::DoubleWell => 2,
            SystemKind::Ou => 1,
            SystemKind::Custom { sigma, .. } => sigma.as_ref().map_or(0, |(r, _)| *r),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma_cols() == 0
    }

    /// Evaluate the diffusion matrix sigma (d x r, row-major) into `out`.
    /// No-op for deterministic systems.
    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        let r = self.sigma_cols();
        if r == 0 {
            return;
        }
        debug_assert_eq!(out.len(), self.dim * r);
        match &self.kind {
            SystemKind::DoubleWell => {
                out[0] = 0.7;
                out[1] = x[0];
                out[2] = 0.0;
                out[3] = 0.5;
            }
            SystemKind::Ou => out[0] = (0.5f64).sqrt(),
            SystemKind::Custom { sigma, .. } => (sigma.as_ref().unwrap().1)(x, out),
            SystemKind::Ode1 => unreachable!(),
        }
    }

    /// Evaluate `Sigma = sigma sigma^T` (d x d, row-major) into `out`.
    /// Writes zeros for deterministic systems.
    pub fn sigma_sigma_t(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert_eq!(out.len(), d * d);
        out.fill(0.0);
        let r = self.sigma_cols();
        if r == 0 {
            return;
        }
        // Builtins have tiny fixed shapes; just form sigma and multiply.
        let mut s = vec![0.0; d * r];
        self.sigma(x, &mut s);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += s[i * r + k] * s[j * r + k];
                }
                out[i * d + j] = acc;
            }
        }
    }

    /// Divergence of the drift field. Needed by the pointwise adjoint
    /// (Perron-Frobenius) generator; analytic for the builtins.
    pub fn drift_divergence(&self, x: &[f64]) -> Result<f64> {
        match &self.kind {
            SystemKind::Ode1 => Ok(ODE1_GAMMA + ODE1_DELTA),
            SystemKind::DoubleWell => Ok(4.0 - 12.0 * x[0] * x[0] - 2.0),
            SystemKind::Ou => Ok(-1.0),
            SystemKind::Custom { .. } => Err(Error::Unsupported(
                "drift divergence is not available for custom systems".into(),
            )),
        }
    }

    /// Column divergence of Sigma: `out[j] = sum_i d_i Sigma_ij` (length d),
    /// plus the scalar `sum_ij d_i d_j Sigma_ij` as the return value.
    pub fn sigma_divergence(&self, x: &[f64], out: &mut [f64]) -> Result<f64> {
        out.fill(0.0);
        if self.diffusion_frozen {
            return Ok(0.0);
        }
        match &self.kind {
            SystemKind::Ode1 => Ok(0.0),
            SystemKind::DoubleWell => {
                // Sigma = [[0.49 + x1^2, 0.5 x1], [0.5 x1, 0.25]].
                out[0] = 2.0 * x[0];
                out[1] = 0.5;
                Ok(2.0)
            }
            SystemKind::Ou => Ok(0.0),
            SystemKind::Custom { sigma, .. } => {
                if sigma.is_none() {
                    Ok(0.0)
                } else {
                    Err(Error::Unsupported(
                        "Sigma derivatives are not available for custom diffusive systems".into(),
                    ))
                }
            }
        }
    }

    /// Copy of this system with the diffusion switched off; the drift is
    /// unchanged. Used for integrator-order tests against exact ODE flows.
    pub fn freeze_diffusion(&self) -> DynamicalSystem {
        let mut s = self.clone();
        s.diffusion_frozen = true;
        s
    }
}

/// An observable with the derivatives the generator needs. The Hessian
/// closure writes a symmetric d x d block (row-major); leave it `None` for
/// observables used only with deterministic dynamics.
pub struct ObservableProbe {
    pub value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub gradient: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    pub hessian: Option<Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl ObservableProbe {
    /// Convenience constructor for 1D observables given f, f', f''.
    pub fn scalar_1d(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ddf: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ObservableProbe {
            value: Box::new(move |x| f(x[0])),
            gradient: Box::new(move |x, out| out[0] = df(x[0])),
            hessian: Some(Box::new(move |x, out| out[0] = ddf(x[0]))),
        }
    }
}

/// Apply the Koopman generator to a probe at x:
/// `b(x) . grad f(x) + 1/2 Tr(Sigma(x) Hess f(x))`.
///
/// Deterministic systems skip the trace term entirely; diffusive systems
/// require the probe to carry a Hessian.
pub fn apply_generator(sys: &DynamicalSystem, probe: &ObservableProbe, x: &[f64]) -> Result<f64> {
    let d = sys.dim;
    let mut b = vec![0.0; d];
    let mut grad = vec![0.0; d];
    sys.drift(x, &mut b);
    (probe.gradient)(x, &mut grad);
    let mut acc: f64 = b.iter().zip(&grad).map(|(bi, gi)| bi * gi).sum();
    if !sys.is_deterministic() {
        let hess_fn = probe.hessian.as_ref().ok_or_else(|| {
            Error::Unsupported(format!(
                "system '{}' is diffusive but the probe has no Hessian",
                sys.name
            ))
        })?;
        let mut sig = vec![0.0; d * d];
        let mut hess = vec![0.0; d * d];
        sys.sigma_sigma_t(x, &mut sig);
        hess_fn(x, &mut hess);
        let trace: f64 = (0..d)
            .map(|i| (0..d).map(|j| sig[i * d + j] * hess[j * d + i]).sum::<f64>())
            .sum();
        acc += 0.5 * trace;
    }
    Ok(acc)
}

/// Euler-Maruyama endpoint after time t with fixed step h.
///
/// One Wiener increment per step and channel, drawn in a fixed order from
/// `rng`; deterministic systems take plain Euler steps and never touch the
/// rng. The endpoint is not clipped to the domain — basis functions are
/// defined (or identically zero) outside it.
pub fn evolve(
    sys: &DynamicalSystem,
    x0: &[f64],
    t: f64,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(h > 0.0) || t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "evolve needs h > 0 and t >= 0, got h={h}, t={t}"
        )));
    }
    let steps_f = t / h;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-6 * steps.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "t/h = {steps_f} is not integral within rounding"
        )));
    }
    let steps = steps as u64;
    let d = sys.dim;
    let r = sys.sigma_cols();
    let sqrt_h = h.sqrt();
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * r];
    for k in 0..steps {
        sys.drift(&x, &mut b);
        if r > 0 {
            sys.sigma(&x, &mut s);
        }
        for i in 0..d {
            x[i] += h * b[i];
        }
        for c in 0..r {
            let dw: f64 = sqrt_h * rng.sample::<f64, _>(StandardNormal);
            for i in 0..d {
                x[i] += s[i * r + c] * dw;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "system '{}' diverged at step {k} of {steps}",
                sys.name
            )));
        }
    }
    Ok(x)
}

/// Monte Carlo estimate of the Koopman operator:
/// `K^t f(x) = E[f(Phi^t(x))]`, averaged over `n_realizations` independent
/// trajectories. With `n_realizations = 1` this is the single-sample EDMD
/// estimate — unbiased but noisy.
pub fn koopman_apply_mc(
    sys: &DynamicalSystem,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    t: f64,
    h: f64,
    n_realizations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_realizations == 0 {
        return Err(Error::InvalidArgument(
            "koopman_apply_mc needs n_realizations >= 1".into(),
        ));
    }
    let mut acc = 0.0;
    for _ in 0..n_realizations {
        let end = evolve(sys, x, t, h, rng)?;
        acc += f(&end);
    }
    Ok(acc / n_realizations as f64)
}

type Sampler = Arc<dyn Fn(&mut ChaCha8Rng, &mut [f64]) + Send + Sync>;

/// The measure mu that samples are drawn from.
#[derive(Clone)]
pub enum SamplingMeasure {
    /// Uniform on an axis-aligned box.
    UniformBox(Domain),
    /// Arbitrary density, represented only by its sampler (one draw per call,
    /// writing a point of the stated dimension).
    Custom { dim: usize, sampler: Sampler },
}

impl SamplingMeasure {
    pub fn uniform(domain: &Domain) -> Self {
        SamplingMeasure::UniformBox(domain.clone())
    }

    pub fn dim(&self) -> usize {
        match self {
            SamplingMeasure::UniformBox(d) => d.dim(),
            SamplingMeasure::Custom { dim, .. } => *dim,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            SamplingMeasure::UniformBox(domain) => {
                for (o, &(lo, hi)) in out.iter_mut().zip(&domain.bounds) {
                    *o = rng.random_range(lo..hi);
                }
            }
            SamplingMeasure::Custom { sampler, .. } => sampler(rng, out),
        }
    }
}

/// Samples are generated in fixed blocks of this many points; each block has
/// its own derived rng stream. Assembly code that streams over blocks in
/// parallel therefore reproduces `sample_points` bit-for-bit.
pub const SAMPLE_BLOCK: usize = 8192;

/// Draw M i.i.d. points from the measure. Identical `(seed, M)` give
/// bit-identical results regardless of thread count (the stream layout is
/// fixed per block, not per thread).
pub fn sample_points(measure: &SamplingMeasure, m: usize, seed: u64) -> PointSet {
    let d = measure.dim();
    let mut data = vec![0.0; m * d];
    for (b, chunk) in data.chunks_mut(SAMPLE_BLOCK * d).enumerate() {
        let mut rng = rng::stream(seed, &[purpose::SAMPLING, b as u64]);
        for point in chunk.chunks_mut(d) {
            measure.draw(&mut rng, point);
        }
    }
    PointSet::new(d, data)
}

/// Draw one block (`SAMPLE_BLOCK` points, fewer for the tail) of the same
/// stream `sample_points` uses. `block` indexes from 0; `m` is the total
/// sample count of the run.
pub fn sample_block(measure: &SamplingMeasure, m: usize, seed: u64, block: usize) -> PointSet {
    let d = measure.dim();
    let start = block * SAMPLE_BLOCK;
    assert!(start < m, "block {block} out of range for M={m}");
    let count = SAMPLE_BLOCK.min(m - start);
    let mut data = vec![0.0; count * d];
    let mut rng = rng::stream(seed, &[purpose::SAMPLING, block as u64]);
    for point in data.chunks_mut(d) {
        measure.draw(&mut rng, point);
    }
    PointSet::new(d, data)
}
