//! Composite tensor-product Gauss-Legendre rules on boxes.
//!
//! Ten nodes per panel integrate polynomials of degree 19 exactly, so a
//! single panel already handles every monomial Gram entry we need; the
//! panel count is raised for narrow bumps (Gaussians) and aligned with mesh
//! cells for the piecewise-linear family, where panel-interior smoothness
//! restores the full order.

use crate::systems::PointSet;

// Abscissae and weights of the 10-point rule on [-1, 1].
const GL10_X: [f64; 5] = [
    0.14887433898163121,
    0.43339539412924719,
    0.67940956829902441,
    0.86506336668898451,
    0.97390652851717172,
];
const GL10_W: [f64; 5] = [
    0.29552422471475287,
    0.26926671930999636,
    0.21908636251598204,
    0.14945134915058059,
    0.06667134430868814,
];

/// Nodes and weights of one axis: composite 10-point rule over `panels`
/// equal subintervals of [lo, hi].
fn axis_rule(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(panels >= 1 && hi > lo);
    let width = (hi - lo) / panels as f64;
    let mut xs = Vec::with_capacity(panels * 10);
    let mut ws = Vec::with_capacity(panels * 10);
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let mid = a + 0.5 * width;
        let half = 0.5 * width;
        for i in 0..5 {
            xs.push(mid - half * GL10_X[i]);
            ws.push(half * GL10_W[i]);
            xs.push(mid + half * GL10_X[i]);
            ws.push(half * GL10_W[i]);
        }
    }
    (xs, ws)
}

/// A fixed quadrature rule on a box. Weights sum to the box volume.
pub struct TensorQuadrature {
    nodes: PointSet,
    weights: Vec<f64>,
}

/// Composite Gauss-Legendre rule with `panels[axis]` panels per axis.
pub fn tensor_gauss_legendre(bounds: &[(f64, f64)], panels: &[usize]) -> TensorQuadrature {
    assert_eq!(bounds.len(), panels.len());
    let d = bounds.len();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = bounds
        .iter()
        .zip(panels)
        .map(|(&(lo, hi), &p)| axis_rule(lo, hi, p))
        .collect();
    let total: usize = axes.iter().map(|(xs, _)| xs.len()).product();
    let mut data = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    loop {
        let mut w = 1.0;
        for axis in 0..d {
            data.push(axes[axis].0[idx[axis]]);
            w *= axes[axis].1[idx[axis]];
        }
        weights.push(w);
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < axes[axis].0.len() {
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
    TensorQuadrature {
        nodes: PointSet::new(d, data),
        weights,
    }
}

impl TensorQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        self.nodes.point(i)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Integral of `f` over the box (not volume-normalized).
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * f(self.node(i));
        }
        acc
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }
}
