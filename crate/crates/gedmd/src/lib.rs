//! Data-driven Galerkin approximation of transfer operators and their
//! generators, together with the matrix-Bernstein concentration machinery
//! that certifies how many samples such an approximation needs.
//!
//! The pipeline, end to end:
//!
//! 1. `systems` — benchmark ODE/SDE right-hand sides, exact generator
//!    application, Euler-Maruyama flows, seeded i.i.d. sampling.
//! 2. `dictionary` — finite basis families (monomials, Gaussians, linear
//!    finite elements) with analytic derivatives and sup-bounds.
//! 3. `estimator` — empirical Gram/structure matrices from samples, the
//!    pseudoinverse estimator, and quadrature/analytic reference matrices.
//! 4. `bounds` — Bernstein tail bounds, sample-size formulas, and error
//!    certificates, plus empirical coverage checks.
//! 5. `noise` — the perturbed-evaluation model and its certificates.
//! 6. `spectral` — eigenvalues/eigenfunctions of the estimated operator and
//!    convergence tracking.
//! 7. `harness` — config-driven experiment sweeps with CSV output (also
//!    exposed through the `gedmd` CLI).

pub mod bounds;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod spectral;
pub mod rng;
pub mod systems;

pub use error::{Error, Result};
