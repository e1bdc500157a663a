//! Quadrature rules for expectations over scalar coefficients.

use nalgebra::DMatrix;

/// Nodes and probability weights for approximating `E[g(h)]`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(nodes.len(), weights.len());
        assert!(weights.iter().all(|&w| w >= 0.0), "weights must be non-negative");
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "weights must sum to 1, got {sum}");
        Self { nodes, weights }
    }

    /// Equispaced nodes on `[-rh, rh]` with standard-normal weights,
    /// renormalized to a probability mass.
    pub fn gaussian_equispaced(n_nodes: usize, rh: f64) -> Self {
        assert!(n_nodes >= 2 && rh > 0.0);
        let step = 2.0 * rh / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|i| -rh + i as f64 * step).collect();
        let mut weights: Vec<f64> = nodes.iter().map(|h| (-0.5 * h * h).exp()).collect();
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        Self { nodes, weights }
    }

    /// Gauss-Hermite rule for a standard normal coefficient, computed from
    /// the eigen-decomposition of the Jacobi matrix.
    pub fn gauss_hermite(n: usize) -> Self {
        assert!(n >= 1);
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let node = eig.eigenvalues[j];
                let w = eig.eigenvectors[(0, j)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sum: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / sum).collect(),
        }
    }

    /// A single node at zero; the degenerate coefficient distribution.
    pub fn degenerate_zero() -> Self {
        Self { nodes: vec![0.0], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&h, &w)| w * g(h))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equispaced_weights_normalized() {
        let q = Quadrature::gaussian_equispaced(41, 4.0);
        let sum: f64 = q.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(q.nodes.len(), 41);
        assert!((q.nodes[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        let q = Quadrature::gauss_hermite(20);
        let m1 = q.expect(|h| h);
        let m2 = q.expect(|h| h * h);
        let m4 = q.expect(|h| h.powi(4));
        assert!(m1.abs() < 1e-12);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-10);
    }
}
