//! Gauss–Hermite quadrature for expectations under the standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for `E[g(ε)]`, `ε ~ N(0, 1)` (probabilists' Hermite weight).
///
/// Exact for polynomials of degree `2n - 1`. Weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: eigen-decomposition of the Jacobi matrix of the
    /// monic probabilists' Hermite recurrence `He_{k+1} = x He_k - k He_{k-1}`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    /// Tensor-product expectation over `ε ~ N(0, I_dim)`; cost `n^dim`.
    pub fn expect_nd<F: FnMut(&[f64]) -> f64>(&self, dim: usize, mut g: F) -> f64 {
        let n = self.nodes.len();
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            for (d, &i) in idx.iter().enumerate() {
                point[d] = self.nodes[i];
                w *= self.weights[i];
            }
            acc += w * g(&point);
            let mut d = 0;
            loop {
                if d == dim {
                    return acc;
                }
                idx[d] += 1;
                if idx[d] < n {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_normal_moments() {
        let gh = GaussHermite::new(12);
        let moments = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0];
        for (k, &m) in moments.iter().enumerate() {
            let q = gh.expect(|x| x.powi(k as i32));
            assert!((q - m).abs() < 1e-10, "moment {k}: {q} vs {m}");
        }
    }

    #[test]
    fn tensor_product_factorises() {
        let gh = GaussHermite::new(6);
        let v = gh.expect_nd(2, |e| e[0] * e[0] * e[1] * e[1] + e[0]);
        assert!((v - 1.0).abs() < 1e-12);
        assert!((gh.expect_nd(0, |_| 2.5) - 2.5).abs() < 1e-15);
    }
}
