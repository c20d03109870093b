//! Multivariate monomial basis, graded lexicographic order.
//!
//! The basis is `{ x^alpha : |alpha| <= k }` with `x^alpha = prod_i x_i^{a_i}`,
//! enumerated by total degree and, within a degree, by descending power of
//! the first coordinate: for d = 2 this reads
//!
//! ```text
//!     1, x1, x2, x1^2, x1 x2, x2^2, x1^3, ...
//! ```
//!
//! Evaluation uses per-axis power tables so that a full row costs O(N d)
//! multiplies rather than O(N d k) `powi` calls — rows are evaluated millions
//! of times during a sweep.

/// Exponent tuples for all monomials of total degree <= k in d variables,
/// graded lexicographic.
pub fn graded_lex_exponents(d: usize, k: usize) -> Vec<Vec<u32>> {
    assert!(d >= 1);
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    for degree in 0..=k as u32 {
        emit_degree(&mut out, &mut current, 0, degree);
    }
    out
}

fn emit_degree(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, axis: usize, remaining: u32) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    // Descending first exponent gives the conventional glex order.
    for a in (0..=remaining).rev() {
        current[axis] = a;
        emit_degree(out, current, axis + 1, remaining - a);
    }
}

/// Per-axis power table `pow[i][p] = x_i^p` for p = 0..=k.
#[inline]
pub fn power_table(x: &[f64], k: usize, table: &mut Vec<f64>) {
    let d = x.len();
    table.resize(d * (k + 1), 0.0);
    for i in 0..d {
        let row = &mut table[i * (k + 1)..(i + 1) * (k + 1)];
        row[0] = 1.0;
        for p in 1..=k {
            row[p] = row[p - 1] * x[i];
        }
    }
}

pub struct Monomials {
    pub d: usize,
    pub k: usize,
    pub exponents: Vec<Vec<u32>>,
}

impl Monomials {
    pub fn new(d: usize, k: usize) -> Self {
        Monomials {
            d,
            k,
            exponents: graded_lex_exponents(d, k),
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn eval(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        power_table(x, self.k, scratch);
        let stride = self.k + 1;
        for (n, alpha) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (i, &a) in alpha.iter().enumerate() {
                v *= scratch[i * stride + a as usize];
            }
            out[n] = v;
        }
    }

    /// Gradient rows, `out[n * d + j] = d_j psi_n(x)`.
    pub fn gradient(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        power_table(x, self.k, scratch);
        let stride = self.k + 1;
        let d = self.d;
        for (n, alpha) in self.exponents.iter().enumerate() {
            for j in 0..d {
                let aj = alpha[j];
                if aj == 0 {
                    out[n * d + j] = 0.0;
                    continue;
                }
                let mut v = aj as f64 * scratch[j * stride + (aj - 1) as usize];
                for (i, &a) in alpha.iter().enumerate() {
                    if i != j {
                        v *= scratch[i * stride + a as usize];
                    }
                }
                out[n * d + j] = v;
            }
        }
    }

    /// Hessian of basis function n, row-major d x d.
    pub fn hessian(&self, x: &[f64], n: usize, scratch: &mut Vec<f64>, out: &mut [f64]) {
        power_table(x, self.k, scratch);
        let stride = self.k + 1;
        let d = self.d;
        let alpha = &self.exponents[n];
        for j in 0..d {
            for l in 0..d {
                let v = if j == l {
                    let a = alpha[j];
                    if a < 2 {
                        0.0
                    } else {
                        let mut v =
                            (a * (a - 1)) as f64 * scratch[j * stride + (a - 2) as usize];
                        for (i, &ai) in alpha.iter().enumerate() {
                            if i != j {
                                v *= scratch[i * stride + ai as usize];
                            }
                        }
                        v
                    }
                } else {
                    let (aj, al) = (alpha[j], alpha[l]);
                    if aj == 0 || al == 0 {
                        0.0
                    } else {
                        let mut v = (aj * al) as f64
                            * scratch[j * stride + (aj - 1) as usize]
                            * scratch[l * stride + (al - 1) as usize];
                        for (i, &ai) in alpha.iter().enumerate() {
                            if i != j && i != l {
                                v *= scratch[i * stride + ai as usize];
                            }
                        }
                        v
                    }
                };
                out[j * d + l] = v;
            }
        }
    }

    /// Sup bound on |Psi(x)|^2 over a box: each term x^{2 alpha} is maximized
    /// at the corner with the largest per-axis magnitude, and the term-wise
    /// maxima are summed.
    pub fn sup_bound_identity(&self, bounds: &[(f64, f64)]) -> f64 {
        self.exponents
            .iter()
            .map(|alpha| {
                alpha
                    .iter()
                    .zip(bounds)
                    .map(|(&a, &(lo, hi))| lo.abs().max(hi.abs()).powi(2 * a as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counts_match_binomials() {
        assert_eq!(Monomials::new(2, 8).len(), 45);
        assert_eq!(Monomials::new(1, 8).len(), 9);
        assert_eq!(Monomials::new(3, 3).len(), 20);
        assert_eq!(Monomials::new(1, 0).len(), 1);
    }

    #[test]
    fn glex_order_d2() {
        let m = Monomials::new(2, 2);
        let want: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(m.exponents, want);
    }

    #[test]
    fn eval_and_gradient_agree_with_hand_values() {
        let m = Monomials::new(2, 2);
        let mut scratch = Vec::new();
        let mut row = vec![0.0; m.len()];
        m.eval(&[2.0, 3.0], &mut scratch, &mut row);
        assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);

        let mut grad = vec![0.0; m.len() * 2];
        m.gradient(&[2.0, 3.0], &mut scratch, &mut grad);
        // d(x1 x2) = (x2, x1) = (3, 2) at index 4.
        assert_eq!(&grad[8..10], &[3.0, 2.0]);
        // d(x2^2) = (0, 2 x2) = (0, 6).
        assert_eq!(&grad[10..12], &[0.0, 6.0]);
    }

    #[test]
    fn hessian_hand_value() {
        let m = Monomials::new(2, 3);
        let mut scratch = Vec::new();
        let mut h = vec![0.0; 4];
        // x1^2 x2 is index: degree 3 block starts at 6; (3,0),(2,1) -> index 7.
        assert_eq!(m.exponents[7], vec![2, 1]);
        m.hessian(&[2.0, 3.0], 7, &mut scratch, &mut h);
        // Hess(x1^2 x2) = [[2 x2, 2 x1], [2 x1, 0]] = [[6, 4], [4, 0]].
        assert_relative_eq!(h[0], 6.0);
        assert_relative_eq!(h[1], 4.0);
        assert_relative_eq!(h[2], 4.0);
        assert_relative_eq!(h[3], 0.0);
    }

    #[test]
    fn sup_bound_1d_geometric_sum() {
        // On [-2,2], sum over n<=4 of 4^n = 341.
        let m = Monomials::new(1, 4);
        assert_relative_eq!(m.sup_bound_identity(&[(-2.0, 2.0)]), 341.0);
        let m0 = Monomials::new(1, 0);
        assert_relative_eq!(m0.sup_bound_identity(&[(-2.0, 2.0)]), 1.0);
    }
}
