//! Piecewise-(bi)linear hat functions with zero boundary condition.
//!
//! The mesh is a uniform tensor grid on the domain box. One hat per interior
//! vertex, normalized by `psi_i(v_j) = delta_ij`; every hat vanishes on the
//! domain boundary and outside the box. In 1D these are the classical tent
//! functions on `[v - h, v + h]`; in 2D each basis function is the product of
//! two 1D tents (bilinear on each cell).
//!
//! Gradients are piecewise constant (1D) / piecewise linear (2D) and well
//! defined off the mesh lines; pointwise Hessians do not exist as functions
//! and are deliberately *not* faked as zero — second-order operators must go
//! through the integration-by-parts assembly instead.

use crate::error::{Error, Result};
use crate::systems::Domain;

/// Uniform tensor mesh described by its interior vertex counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub bounds: Vec<(f64, f64)>,
    /// Interior (non-boundary) vertex count per axis.
    pub interior: Vec<usize>,
}

impl MeshSpec {
    pub fn new(domain: &Domain, interior: Vec<usize>) -> Result<Self> {
        let d = domain.dim();
        if d != interior.len() {
            return Err(Error::InvalidArgument(format!(
                "mesh has {} axis counts for a {d}-dimensional domain",
                interior.len()
            )));
        }
        if !(1..=2).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "hat-function meshes support d in {{1, 2}}, got {d}"
            )));
        }
        if interior.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(
                "each mesh axis needs at least one interior vertex".into(),
            ));
        }
        Ok(MeshSpec {
            bounds: domain.bounds.clone(),
            interior,
        })
    }

    pub fn dim(&self) -> usize {
        self.interior.len()
    }

    /// Grid spacing along an axis (between adjacent vertices, boundary
    /// vertices included).
    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.interior[axis] + 1) as f64
    }

    /// Coordinate of interior vertex `i` (0-based) along an axis.
    pub fn vertex(&self, axis: usize, i: usize) -> f64 {
        self.bounds[axis].0 + self.spacing(axis) * (i + 1) as f64
    }

    /// Total number of basis functions.
    pub fn interior_count(&self) -> usize {
        self.interior.iter().product()
    }
}

pub struct FemLinear {
    pub mesh: MeshSpec,
}

/// 1D tent with peak at v and half-width h, evaluated at x. Zero at and
/// beyond `v +/- h`, which in particular makes every hat vanish on the
/// domain boundary and outside the box.
#[inline]
fn tent(x: f64, v: f64, h: f64) -> f64 {
    let t = 1.0 - (x - v).abs() / h;
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// Derivative of the tent where it exists; 0 outside the open support and at
/// the (measure-zero) peak.
#[inline]
fn tent_deriv(x: f64, v: f64, h: f64) -> f64 {
    let u = x - v;
    if u.abs() >= h || u == 0.0 {
        0.0
    } else if u > 0.0 {
        -1.0 / h
    } else {
        1.0 / h
    }
}

impl FemLinear {
    pub fn new(mesh: MeshSpec) -> Self {
        FemLinear { mesh }
    }

    pub fn len(&self) -> usize {
        self.mesh.interior_count()
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    /// Flat index of the hat at interior vertex (i) or (i, j).
    pub fn node_index(&self, ij: &[usize]) -> usize {
        match self.mesh.dim() {
            1 => ij[0],
            2 => ij[0] * self.mesh.interior[1] + ij[1],
            _ => unreachable!(),
        }
    }

    /// Coordinates of the vertex owning basis function n.
    pub fn node_coords(&self, n: usize) -> Vec<f64> {
        match self.mesh.dim() {
            1 => vec![self.mesh.vertex(0, n)],
            2 => {
                let ny = self.mesh.interior[1];
                vec![self.mesh.vertex(0, n / ny), self.mesh.vertex(1, n % ny)]
            }
            _ => unreachable!(),
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self.mesh.dim() {
            1 => {
                let h = self.mesh.spacing(0);
                for i in 0..self.mesh.interior[0] {
                    out[i] = tent(x[0], self.mesh.vertex(0, i), h);
                }
            }
            2 => {
                let (hx, hy) = (self.mesh.spacing(0), self.mesh.spacing(1));
                let (nx, ny) = (self.mesh.interior[0], self.mesh.interior[1]);
                // Tensor structure: evaluate the two 1D families once.
                let tx: Vec<f64> = (0..nx)
                    .map(|i| tent(x[0], self.mesh.vertex(0, i), hx))
                    .collect();
                let ty: Vec<f64> = (0..ny)
                    .map(|j| tent(x[1], self.mesh.vertex(1, j), hy))
                    .collect();
                for i in 0..nx {
                    for j in 0..ny {
                        out[i * ny + j] = tx[i] * ty[j];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self.mesh.dim() {
            1 => {
                let h = self.mesh.spacing(0);
                for i in 0..self.mesh.interior[0] {
                    out[i] = tent_deriv(x[0], self.mesh.vertex(0, i), h);
                }
            }
            2 => {
                let (hx, hy) = (self.mesh.spacing(0), self.mesh.spacing(1));
                let (nx, ny) = (self.mesh.interior[0], self.mesh.interior[1]);
                let tx: Vec<f64> = (0..nx)
                    .map(|i| tent(x[0], self.mesh.vertex(0, i), hx))
                    .collect();
                let dtx: Vec<f64> = (0..nx)
                    .map(|i| tent_deriv(x[0], self.mesh.vertex(0, i), hx))
                    .collect();
                let ty: Vec<f64> = (0..ny)
                    .map(|j| tent(x[1], self.mesh.vertex(1, j), hy))
                    .collect();
                let dty: Vec<f64> = (0..ny)
                    .map(|j| tent_deriv(x[1], self.mesh.vertex(1, j), hy))
                    .collect();
                for i in 0..nx {
                    for j in 0..ny {
                        let n = i * ny + j;
                        out[n * 2] = dtx[i] * ty[j];
                        out[n * 2 + 1] = tx[i] * dty[j];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// Max number of hats overlapping a generic point: 2 per axis.
    pub fn overlap_count(&self) -> usize {
        1usize << self.mesh.dim()
    }
}
