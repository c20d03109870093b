//! Experiment configuration: a TOML file mirroring one sweep.
//!
//! The parse is strict — unknown keys anywhere are errors, as are fields
//! that belong to a family or sweep kind other than the one selected. The
//! intent is that a config which parses cleanly describes exactly one
//! well-posed experiment, so a typo'd key can never silently fall back to a
//! default.

use serde::Deserialize;

use crate::dictionary::{self, Dictionary, MeshSpec, OperatorKind};
use crate::error::{Error, Result};
use crate::estimator::ReferenceMethod;
use crate::noise::NoiseModel;
use crate::systems::{builtin_double_well, builtin_ode, builtin_ou, DynamicalSystem};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in benchmark id: "ou", "ode1" or "double_well".
    pub system: String,
    /// Replicates per grid point. Omitted = the scale's default (20 desk,
    /// 50 paper).
    pub replicates: Option<usize>,
    /// Master seed; every stream in the run derives from it. The CLI
    /// `--seed` flag overrides.
    #[serde(default)]
    pub seed: u64,
    /// Default output path; the CLI `--out` flag overrides.
    #[serde(default)]
    pub out: Option<String>,
    pub operator: OperatorConfig,
    pub dictionary: DictionaryConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// "koopman_generator", "pf_generator" or "koopman_t".
    pub kind: String,
    /// Time horizon (koopman_t only).
    pub t: Option<f64>,
    /// Integrator step (koopman_t only).
    pub h: Option<f64>,
    /// Realizations averaged per Koopman application (koopman_t only).
    pub n_realizations: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// "monomials", "gaussians" or "fem".
    pub family: String,
    /// Total degree (monomials only).
    pub degree: Option<usize>,
    /// Bandwidth (gaussians only). Defaults to `1 / (2 N)` with `N` the
    /// total center count, which keeps the bumps separated at every size.
    pub theta: Option<f64>,
    /// Centers per axis (gaussians only); total N is the product across
    /// dimensions.
    pub centers_per_axis: Option<Vec<usize>>,
    /// Interior vertices per axis (fem only).
    pub mesh: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// "data", "dictionary", "noise" or "coupled".
    pub kind: String,
    /// Sample-size grid for data/noise sweeps. Strictly increasing.
    /// Omitted = the scale's default grid.
    pub m: Option<Vec<usize>>,
    /// Dictionary sizes for the dictionary sweep (total N per point;
    /// quadrant counts for Gaussians). Strictly increasing.
    pub n: Option<Vec<usize>>,
    /// Noise levels for the noise sweep. Strictly increasing, `0.0` allowed
    /// as the first entry.
    pub sigma: Option<Vec<f64>>,
    /// Fixed sample size for dictionary sweeps (default: the scale's).
    pub m_fixed: Option<usize>,
    /// Operator-error target for the coupled sweep: each dictionary size
    /// runs at the sample size its certificate demands for this epsilon.
    pub epsilon: Option<f64>,
    /// Confidence for certificate-derived columns (default 0.95).
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    0.95
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// "analytic", "quadrature" or "monte_carlo" (default).
    pub method: Option<String>,
    /// Sample size of the Monte Carlo reference. Omitted = the scale's.
    pub m_ref: Option<usize>,
    /// Panels per axis for the quadrature reference.
    pub panels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Evaluation-noise level applied on data sweeps (noise sweeps use the
    /// sweep's sigma list instead).
    #[serde(default)]
    pub sigma: f64,
    /// Keep structurally-zero hat evaluations exactly zero.
    #[serde(default = "default_true")]
    pub fem_sparse: bool,
}

fn default_true() -> bool {
    true
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma: 0.0,
            fem_sparse: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Matrix-deviation grid for the bound report. Strictly increasing.
    pub delta: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Empirical coverage trials per row; 0 disables coverage columns.
    #[serde(default)]
    pub trials: usize,
    /// Noise level for the noisy-certificate rows; 0 omits them.
    #[serde(default)]
    pub sigma: f64,
    /// Override for the evaluation sup-bound; default is the larger of the
    /// identity and operator-row bounds.
    pub gamma: Option<f64>,
}

/// Desk- versus paper-scale default grids. Paper scale reproduces the
/// published protocol (hours); desk scale keeps every sweep in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn default_m_grid(&self) -> Vec<usize> {
        let top = match self {
            Scale::Desk => 15,
            Scale::Paper => 19,
        };
        (8..=top).map(|e| 1usize << e).collect()
    }

    pub fn default_m_ref(&self) -> usize {
        match self {
            Scale::Desk => 1 << 17,
            Scale::Paper => 1 << 20,
        }
    }

    pub fn default_replicates(&self) -> usize {
        match self {
            Scale::Desk => 20,
            Scale::Paper => 50,
        }
    }

    pub fn default_m_fixed(&self) -> usize {
        match self {
            Scale::Desk => 10_000,
            Scale::Paper => 10_000,
        }
    }

    pub fn default_dict_m_ref(&self) -> usize {
        match self {
            Scale::Desk => 100_000,
            Scale::Paper => 100_000,
        }
    }
}

/// Everything the runner needs, resolved and validated.
pub struct ResolvedExperiment {
    pub system: DynamicalSystem,
    pub operator: OperatorKind,
    pub operator_label: String,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_system()?;
        self.resolve_operator()?;
        self.dictionary.validate(self.resolve_system()?.dim)?;
        self.sweep.validate()?;
        self.reference.validate()?;
        if self.replicates == Some(0) {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.noise.sigma >= 0.0) || !self.noise.sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma must be finite and nonnegative, got {}",
                self.noise.sigma
            )));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        // Cross-field: weak assemblies are never configured here, so active
        // noise only needs a pointwise operator, which all three kinds are.
        Ok(())
    }

    pub fn resolve_system(&self) -> Result<DynamicalSystem> {
        match self.system.as_str() {
            "ou" => Ok(builtin_ou()),
            "ode1" => Ok(builtin_ode()),
            "double_well" => Ok(builtin_double_well()),
            other => Err(Error::Config(format!(
                "unknown system '{other}' (expected ou, ode1 or double_well)"
            ))),
        }
    }

    pub fn resolve_operator(&self) -> Result<OperatorKind> {
        let forbid_t_fields = || -> Result<()> {
            if self.operator.t.is_some()
                || self.operator.h.is_some()
                || self.operator.n_realizations.is_some()
            {
                return Err(Error::Config(
                    "t / h / n_realizations only apply to operator.kind = \"koopman_t\"".into(),
                ));
            }
            Ok(())
        };
        match self.operator.kind.as_str() {
            "koopman_generator" => {
                forbid_t_fields()?;
                Ok(OperatorKind::KoopmanGenerator)
            }
            "pf_generator" => {
                forbid_t_fields()?;
                Ok(OperatorKind::PfGenerator)
            }
            "koopman_t" => {
                let t = self
                    .operator
                    .t
                    .ok_or_else(|| Error::Config("koopman_t needs operator.t".into()))?;
                let h = self.operator.h.unwrap_or(1e-3);
                let n_realizations = self.operator.n_realizations.unwrap_or(1);
                if !(t >= 0.0) || !(h > 0.0) || n_realizations == 0 {
                    return Err(Error::Config(
                        "koopman_t needs t >= 0, h > 0 and n_realizations >= 1".into(),
                    ));
                }
                Ok(OperatorKind::KoopmanT {
                    t,
                    h,
                    n_realizations,
                })
            }
            other => Err(Error::Config(format!(
                "unknown operator kind '{other}' (expected koopman_generator, pf_generator \
                 or koopman_t)"
            ))),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        Ok(ResolvedExperiment {
            system: self.resolve_system()?,
            operator: self.resolve_operator()?,
            operator_label: self.operator.kind.clone(),
        })
    }

    pub fn noise_model(&self) -> NoiseModel {
        noise_model_for(self.noise.sigma, self.noise.fem_sparse)
    }

    pub fn reference_method(&self, scale: Scale) -> Result<ReferenceMethod> {
        match self.reference.method.as_deref().unwrap_or("monte_carlo") {
            "analytic" => Ok(ReferenceMethod::Analytic),
            "quadrature" => Ok(ReferenceMethod::Quadrature {
                panels: self.reference.panels.clone(),
            }),
            "monte_carlo" => Ok(ReferenceMethod::MonteCarlo {
                m_ref: self.reference.m_ref.unwrap_or(scale.default_m_ref()),
                seed: 0, // runner substitutes the derived reference stream
            }),
            other => Err(Error::Config(format!(
                "unknown reference method '{other}' (expected analytic, quadrature or \
                 monte_carlo)"
            ))),
        }
    }
}

pub fn noise_model_for(sigma: f64, fem_sparse: bool) -> NoiseModel {
    if sigma == 0.0 {
        NoiseModel::None
    } else {
        NoiseModel::GaussianIid { sigma, fem_sparse }
    }
}

impl DictionaryConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        let forbid = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Err(Error::Config(format!(
                    "{what} does not apply to the '{}' family",
                    self.family
                )))
            } else {
                Ok(())
            }
        };
        match self.family.as_str() {
            "monomials" => {
                forbid(self.theta.is_some(), "theta")?;
                forbid(self.centers_per_axis.is_some(), "centers_per_axis")?;
                forbid(self.mesh.is_some(), "mesh")?;
                if self.degree.is_none() {
                    return Err(Error::Config("monomials need dictionary.degree".into()));
                }
            }
            "gaussians" => {
                forbid(self.degree.is_some(), "degree")?;
                forbid(self.mesh.is_some(), "mesh")?;
                let counts = self.centers_per_axis.as_ref().ok_or_else(|| {
                    Error::Config("gaussians need dictionary.centers_per_axis".into())
                })?;
                if counts.len() != dim {
                    return Err(Error::Config(format!(
                        "centers_per_axis has {} entries for a {dim}-dimensional system",
                        counts.len()
                    )));
                }
                if counts.iter().any(|&c| c == 0) {
                    return Err(Error::Config("centers_per_axis entries must be >= 1".into()));
                }
                if let Some(theta) = self.theta {
                    if !(theta > 0.0) {
                        return Err(Error::Config(format!(
                            "gaussian theta must be positive, got {theta}"
                        )));
                    }
                }
            }
            "fem" => {
                forbid(self.degree.is_some(), "degree")?;
                forbid(self.theta.is_some(), "theta")?;
                forbid(self.centers_per_axis.is_some(), "centers_per_axis")?;
                let mesh = self
                    .mesh
                    .as_ref()
                    .ok_or_else(|| Error::Config("fem needs dictionary.mesh".into()))?;
                if mesh.len() != dim {
                    return Err(Error::Config(format!(
                        "mesh has {} axis counts for a {dim}-dimensional system",
                        mesh.len()
                    )));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dictionary family '{other}' (expected monomials, gaussians or fem)"
                )))
            }
        }
        Ok(())
    }

    /// Build the configured dictionary for one system.
    pub fn build(&self, sys: &DynamicalSystem) -> Result<Dictionary> {
        match self.family.as_str() {
            "monomials" => Ok(dictionary::monomials(
                sys.dim,
                self.degree.expect("validated"),
            )),
            "gaussians" => {
                let counts = self.centers_per_axis.clone().expect("validated");
                build_grid_gaussians(sys, &counts, self.theta)
            }
            "fem" => {
                let mesh = MeshSpec::new(&sys.domain, self.mesh.clone().expect("validated"))?;
                Ok(dictionary::fem_linear(mesh))
            }
            _ => unreachable!("validated"),
        }
    }
}

/// Gaussians at the centers of the axis-aligned partition of the domain
/// into `counts[0] x counts[1] x ...` equal cells, bandwidth defaulting to
/// `1/(2N)` for N total centers.
pub fn build_grid_gaussians(
    sys: &DynamicalSystem,
    counts: &[usize],
    theta: Option<f64>,
) -> Result<Dictionary> {
    let total: usize = counts.iter().product();
    let theta = theta.unwrap_or(1.0 / (2.0 * total as f64));
    let mut centers = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    loop {
        let c: Vec<f64> = idx
            .iter()
            .zip(&sys.domain.bounds)
            .zip(counts)
            .map(|((&i, &(lo, hi)), &n)| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
            .collect();
        centers.push(c);
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == counts.len() {
                return dictionary::gaussians(centers, theta);
            }
        }
    }
}

fn check_strictly_increasing<T: PartialOrd + std::fmt::Debug>(list: &[T], what: &str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config(format!("{what} list is empty")));
    }
    if list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "{what} list must be strictly increasing, got {list:?}"
        )));
    }
    Ok(())
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.p && self.p < 1.0) {
            return Err(Error::Config(format!(
                "sweep.p must lie in (0, 1), got {}",
                self.p
            )));
        }
        if let Some(m) = &self.m {
            check_strictly_increasing(m, "sweep.m")?;
            if m[0] == 0 {
                return Err(Error::Config("sweep.m entries must be >= 1".into()));
            }
        }
        if let Some(n) = &self.n {
            check_strictly_increasing(n, "sweep.n")?;
        }
        if let Some(s) = &self.sigma {
            check_strictly_increasing(s, "sweep.sigma")?;
            if s[0] < 0.0 {
                return Err(Error::Config("sweep.sigma entries must be >= 0".into()));
            }
        }
        let forbid = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Err(Error::Config(format!(
                    "{what} does not apply to sweep.kind = \"{}\"",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "data" => {
                forbid(self.n.is_some(), "sweep.n")?;
                forbid(self.sigma.is_some(), "sweep.sigma")?;
                forbid(self.m_fixed.is_some(), "sweep.m_fixed")?;
                forbid(self.epsilon.is_some(), "sweep.epsilon")?;
            }
            "dictionary" => {
                forbid(self.m.is_some(), "sweep.m")?;
                forbid(self.sigma.is_some(), "sweep.sigma")?;
                forbid(self.epsilon.is_some(), "sweep.epsilon")?;
                if self.n.is_none() {
                    return Err(Error::Config("dictionary sweep needs sweep.n".into()));
                }
            }
            "noise" => {
                forbid(self.n.is_some(), "sweep.n")?;
                forbid(self.m_fixed.is_some(), "sweep.m_fixed")?;
                forbid(self.epsilon.is_some(), "sweep.epsilon")?;
                if self.sigma.is_none() {
                    return Err(Error::Config("noise sweep needs sweep.sigma".into()));
                }
            }
            "coupled" => {
                forbid(self.m.is_some(), "sweep.m")?;
                forbid(self.sigma.is_some(), "sweep.sigma")?;
                forbid(self.m_fixed.is_some(), "sweep.m_fixed")?;
                if self.n.is_none() {
                    return Err(Error::Config("coupled sweep needs sweep.n".into()));
                }
                match self.epsilon {
                    Some(e) if e > 0.0 => {}
                    _ => {
                        return Err(Error::Config(
                            "coupled sweep needs a positive sweep.epsilon".into(),
                        ))
                    }
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep kind '{other}' (expected data, dictionary, noise or coupled)"
                )))
            }
        }
        Ok(())
    }
}

impl ReferenceConfig {
    fn validate(&self) -> Result<()> {
        if let Some(m) = self.m_ref {
            if m == 0 {
                return Err(Error::Config("reference.m_ref must be >= 1".into()));
            }
        }
        if let Some(method) = self.method.as_deref() {
            if !matches!(method, "analytic" | "quadrature" | "monte_carlo") {
                return Err(Error::Config(format!(
                    "unknown reference method '{method}'"
                )));
            }
            if method != "monte_carlo" && self.m_ref.is_some() {
                return Err(Error::Config(
                    "reference.m_ref only applies to monte_carlo references".into(),
                ));
            }
            if method != "quadrature" && self.panels.is_some() {
                return Err(Error::Config(
                    "reference.panels only applies to quadrature references".into(),
                ));
            }
        }
        Ok(())
    }
}

impl BoundsConfig {
    fn validate(&self) -> Result<()> {
        check_strictly_increasing(&self.delta, "bounds.delta")?;
        if self.delta[0] <= 0.0 {
            return Err(Error::Config("bounds.delta entries must be positive".into()));
        }
        if !(0.0 < self.p && self.p < 1.0) {
            return Err(Error::Config(format!(
                "bounds.p must lie in (0, 1), got {}",
                self.p
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("bounds.sigma must be >= 0".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config("bounds.gamma must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        system = "ou"
        [operator]
        kind = "koopman_generator"
        [dictionary]
        family = "monomials"
        degree = 4
        [sweep]
        kind = "data"
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.replicates, None);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.sweep.m.is_none());
        assert_eq!(cfg.resolve_system().unwrap().dim, 1);
        assert!(matches!(
            cfg.resolve_operator().unwrap(),
            OperatorKind::KoopmanGenerator
        ));
        assert_eq!(cfg.noise_model(), NoiseModel::None);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for broken in [
            MINIMAL.replace("system = \"ou\"", "system = \"ou\"\nbogus = 1"),
            MINIMAL.replace("kind = \"koopman_generator\"", "kind = \"koopman_generator\"\nzzz = 2"),
            MINIMAL.replace("degree = 4", "degree = 4\nwidth = 0.1"),
            MINIMAL.replace("kind = \"data\"", "kind = \"data\"\nstep = 3"),
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(&broken), Err(Error::Config(_))),
                "accepted: {broken}"
            );
        }
    }

    #[test]
    fn cross_family_fields_are_rejected() {
        let broken = MINIMAL.replace("degree = 4", "degree = 4\ntheta = 0.5");
        assert!(ExperimentConfig::from_toml(&broken).is_err());
        let broken = MINIMAL.replace(
            "family = \"monomials\"\n        degree = 4",
            "family = \"fem\"",
        );
        // fem without a mesh
        assert!(ExperimentConfig::from_toml(&broken).is_err());
    }

    #[test]
    fn sweep_lists_must_increase() {
        let bad = MINIMAL.replace("kind = \"data\"", "kind = \"data\"\nm = [512, 512]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let good = MINIMAL.replace("kind = \"data\"", "kind = \"data\"\nm = [256, 512]");
        assert!(ExperimentConfig::from_toml(&good).is_ok());
        let bad = MINIMAL.replace(
            "kind = \"data\"",
            "kind = \"noise\"\nsigma = [0.01, 0.001]",
        );
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn sweep_kind_gates_its_fields() {
        let bad = MINIMAL.replace("kind = \"data\"", "kind = \"data\"\nn = [4, 8]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("kind = \"data\"", "kind = \"dictionary\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err(), "missing n list");
        let bad = MINIMAL.replace("kind = \"data\"", "kind = \"coupled\"\nn = [4, 8]");
        assert!(ExperimentConfig::from_toml(&bad).is_err(), "missing epsilon");
    }

    #[test]
    fn koopman_t_fields_are_gated_and_validated() {
        let with_t = MINIMAL.replace(
            "kind = \"koopman_generator\"",
            "kind = \"koopman_t\"\nt = 0.1",
        );
        let cfg = ExperimentConfig::from_toml(&with_t).unwrap();
        assert!(matches!(
            cfg.resolve_operator().unwrap(),
            OperatorKind::KoopmanT { n_realizations: 1, .. }
        ));
        let stray = MINIMAL.replace(
            "kind = \"koopman_generator\"",
            "kind = \"koopman_generator\"\nt = 0.1",
        );
        assert!(ExperimentConfig::from_toml(&stray).is_err());
        let bad_h = MINIMAL.replace(
            "kind = \"koopman_generator\"",
            "kind = \"koopman_t\"\nt = 0.1\nh = 0.0",
        );
        assert!(ExperimentConfig::from_toml(&bad_h).is_err());
    }

    #[test]
    fn grid_gaussian_centers_cover_the_partition() {
        let sys = builtin_ode();
        let dict = build_grid_gaussians(&sys, &[2, 2], Some(0.3)).unwrap();
        assert_eq!(dict.len(), 4);
        // Domain [-2,2] x [-1,1]: cell centers at (+-1, +-0.5).
        let g = dict.gradient_vec(&[1.0, 0.5]);
        assert_eq!(g.len(), 8);
        // Bandwidth default: 1/(2N).
        let auto = build_grid_gaussians(&sys, &[2, 2], None).unwrap();
        assert_eq!(auto.len(), 4);
    }

    #[test]
    fn quadrant_centers_match_hand_values() {
        let sys = builtin_ou();
        let dict = build_grid_gaussians(&sys, &[4], None).unwrap();
        assert_eq!(dict.len(), 4);
        // [-2, 2] in 4 cells: centers -1.5, -0.5, 0.5, 1.5; theta = 1/8.
        let row = dict.eval_vec(&[-1.5]);
        assert!((row[0] - 1.0).abs() < 1e-12, "center eval {}", row[0]);
    }
}
