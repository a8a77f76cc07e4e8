use std::f64::consts::PI;

/// Orthonormal DCT-II basis, row-major `n x n`: row `k` is basis vector `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    n: usize,
    matrix: Vec<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "DCT size must be positive");
        let nf = n as f64;
        let mut matrix = Vec::with_capacity(n * n);
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                matrix.push(scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos());
            }
        }
        Self { n, matrix }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.matrix[k * self.n..(k + 1) * self.n]
    }

    /// First `n_coeffs` DCT-II coefficients of `x`.
    pub fn transform(&self, x: &[f64], n_coeffs: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..n_coeffs)
            .map(|k| self.row(k).iter().zip(x).map(|(b, v)| b * v).sum())
            .collect()
    }
}
