//! Isotropic Gaussian bumps on a set of centers.
//!
//! ```text
//!     psi_n(x) = exp(-|x - p_n|^2 / (2 theta^2))
//! ```
//!
//! All centers share one bandwidth theta. Each |psi_n| <= 1, so the identity
//! sup-bound is simply N. Derivatives are analytic:
//!
//! ```text
//!     grad psi_n = -psi_n (x - p_n) / theta^2
//!     Hess psi_n = psi_n [ (x-p_n)(x-p_n)^T / theta^4 - I / theta^2 ]
//! ```

use crate::error::{Error, Result};
use crate::systems::Domain;

pub struct Gaussians {
    pub d: usize,
    pub centers: Vec<Vec<f64>>,
    pub theta: f64,
}

impl Gaussians {
    pub fn new(centers: Vec<Vec<f64>>, theta: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("no Gaussian centers given".into()));
        }
        if !(theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian bandwidth must be positive, got {theta}"
            )));
        }
        let d = centers[0].len();
        if centers.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidArgument(
                "Gaussian centers have inconsistent dimensions".into(),
            ));
        }
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                let dist2: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist2 == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate Gaussian centers at indices {i} and {j}"
                    )));
                }
            }
        }
        Ok(Gaussians { d, centers, theta })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let inv2t2 = 1.0 / (2.0 * self.theta * self.theta);
        for (n, c) in self.centers.iter().enumerate() {
            let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
            out[n] = (-r2 * inv2t2).exp();
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let inv_t2 = 1.0 / (self.theta * self.theta);
        let inv2t2 = 0.5 * inv_t2;
        for (n, c) in self.centers.iter().enumerate() {
            let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
            let v = (-r2 * inv2t2).exp();
            for j in 0..d {
                out[n * d + j] = -v * (x[j] - c[j]) * inv_t2;
            }
        }
    }

    pub fn hessian(&self, x: &[f64], n: usize, out: &mut [f64]) {
        let d = self.d;
        let c = &self.centers[n];
        let inv_t2 = 1.0 / (self.theta * self.theta);
        let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
        let v = (-0.5 * r2 * inv_t2).exp();
        for j in 0..d {
            for l in 0..d {
                let mut h = (x[j] - c[j]) * (x[l] - c[l]) * inv_t2 * inv_t2;
                if j == l {
                    h -= inv_t2;
                }
                out[j * d + l] = v * h;
            }
        }
    }
}

/// Equidistant grid with half-unit spacing covering the domain: centers at
/// `lo + 0.5 i` along every axis, endpoints included. On [-2,2] this is the
/// 9-point line grid; on [-2,2]x[-1,1] the 9x5 = 45-point plane grid.
pub fn half_spaced_grid(domain: &Domain) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = domain
        .bounds
        .iter()
        .map(|&(lo, hi)| {
            let count = ((hi - lo) / 0.5).round() as usize + 1;
            (0..count).map(|i| lo + 0.5 * i as f64).collect()
        })
        .collect();
    cartesian(&axes)
}

/// Centers of `n` congruent cells tiling a one-dimensional domain. This is
/// the growing-dictionary family for the dictionary-limit sweeps, where N
/// ranges over powers of 4 while the domain stays fixed.
pub fn quadrant_centers(domain: &Domain, n: usize) -> Result<Vec<Vec<f64>>> {
    if domain.dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "quadrant centers are defined for 1D domains here, got d={}",
            domain.dim()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need n >= 1 quadrants".into()));
    }
    let (lo, hi) = domain.bounds[0];
    let w = (hi - lo) / n as f64;
    Ok((0..n).map(|i| vec![lo + (i as f64 + 0.5) * w]).collect())
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_height_at_center() {
        let g = Gaussians::new(vec![vec![0.5, -0.25]], 0.2).unwrap();
        let mut out = [0.0];
        g.eval(&[0.5, -0.25], &mut out);
        assert_relative_eq!(out[0], 1.0);
    }

    #[test]
    fn paper_grids_have_expected_layout() {
        let line = half_spaced_grid(&Domain::new(vec![(-2.0, 2.0)]));
        assert_eq!(line.len(), 9);
        assert_relative_eq!(line[0][0], -2.0);
        assert_relative_eq!(line[4][0], 0.0);
        assert_relative_eq!(line[8][0], 2.0);

        let plane = half_spaced_grid(&Domain::new(vec![(-2.0, 2.0), (-1.0, 1.0)]));
        assert_eq!(plane.len(), 45);
        assert_eq!(plane[0], vec![-2.0, -1.0]);
        assert_eq!(plane[44], vec![2.0, 1.0]);
    }

    #[test]
    fn quadrants_tile_the_interval() {
        let c = quadrant_centers(&Domain::new(vec![(-2.0, 2.0)]), 4).unwrap();
        let flat: Vec<f64> = c.iter().map(|p| p[0]).collect();
        assert_eq!(flat, vec![-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn duplicate_centers_rejected() {
        assert!(Gaussians::new(vec![vec![0.0], vec![0.0]], 0.1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Gaussians::new(vec![vec![0.3, -0.1], vec![-1.0, 0.5]], 0.35).unwrap();
        let x = [0.11, 0.42];
        let mut grad = vec![0.0; 4];
        g.gradient(&x, &mut grad);
        let eps = 1e-6;
        for n in 0..2 {
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += eps;
                xm[j] -= eps;
                let mut vp = [0.0; 2];
                let mut vm = [0.0; 2];
                g.eval(&xp, &mut vp);
                g.eval(&xm, &mut vm);
                let fd = (vp[n] - vm[n]) / (2.0 * eps);
                assert_relative_eq!(grad[n * 2 + j], fd, epsilon = 1e-8);
            }
        }
    }
}
