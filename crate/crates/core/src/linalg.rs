//! Small dense helpers for the d×d matrices (d is small, typically ≤ 4)
//! that every other module multiplies by the hundred thousand.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest singular value (operator norm induced by the Euclidean norm).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// (largest, smallest) singular value.
pub fn extreme_singular_values(m: &Matrix) -> (f64, f64) {
    if m.nrows() == 1 && m.ncols() == 1 {
        let v = m[(0, 0)].abs();
        return (v, v);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let lo = sv.iter().fold(f64::INFINITY, |acc, &s| acc.min(s));
    (hi, lo)
}

pub fn max_abs_entry(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

/// Max-entry distance `|A·B − I|`.
pub fn identity_residual(a: &Matrix, b: &Matrix) -> f64 {
    let p = a * b;
    let n = p.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[(i, j)] - target).abs());
        }
    }
    worst
}

/// `‖QᵀQ − I‖` in the spectral norm.
pub fn orthogonality_defect(q: &Matrix) -> f64 {
    let g = q.transpose() * q - Matrix::identity(q.ncols(), q.ncols());
    spectral_norm(&g)
}

/// Householder QR with the sign convention `diag(R) ≥ 0`.
///
/// Works for tall matrices (rows ≥ cols); `Q` is rows×cols with
/// orthonormal columns, `R` is cols×cols upper triangular with exact zeros
/// below the diagonal.
pub fn qr_positive(m: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = m.shape();
    debug_assert!(rows >= cols);
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..cols {
        if r[(k, k)] < 0.0 {
            for j in 0..cols {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..rows {
                q[(i, k)] = -q[(i, k)];
            }
        }
        for i in (k + 1)..cols {
            r[(i, k)] = 0.0;
        }
    }
    (q, r)
}

/// Inverse of an upper triangular matrix by back substitution.
pub fn upper_triangular_inverse(r: &Matrix) -> Option<Matrix> {
    let n = r.nrows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in (i + 1)..=col {
                s -= r[(i, k)] * inv[(k, col)];
            }
            let d = r[(i, i)];
            if d == 0.0 {
                return None;
            }
            inv[(i, col)] = s / d;
        }
    }
    Some(inv)
}

pub fn rotation(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Running product `P = F_k ⋯ F_1` kept as `B · Q · R · e^{log_scale}` with
/// `Q` orthogonal, `R` upper triangular normalized to max-entry 1, and `B` a
/// short block of not yet refactored factors.
///
/// The block is folded into the QR representation every `refactor_every`
/// pushes, or earlier once the norm bound of the pending block exceeds
/// `e^50`, so nothing ever overflows.
#[derive(Debug, Clone)]
pub struct LogProduct {
    block: Matrix,
    q: Matrix,
    r: Matrix,
    log_scale: f64,
    pending: usize,
    pending_log_bound: f64,
    refactor_every: usize,
    scratch: Matrix,
}

pub const DEFAULT_REFACTOR_EVERY: usize = 32;
const MAX_PENDING_LOG_GROWTH: f64 = 50.0;

impl LogProduct {
    pub fn new(dim: usize) -> Self {
        Self::with_cadence(dim, DEFAULT_REFACTOR_EVERY)
    }

    pub fn with_cadence(dim: usize, refactor_every: usize) -> Self {
        Self {
            block: Matrix::identity(dim, dim),
            q: Matrix::identity(dim, dim),
            r: Matrix::identity(dim, dim),
            log_scale: 0.0,
            pending: 0,
            pending_log_bound: 0.0,
            refactor_every: refactor_every.max(1),
            scratch: Matrix::zeros(dim, dim),
        }
    }

    /// Left-multiplies the running product by `factor`.
    pub fn push(&mut self, factor: &Matrix) {
        self.scratch.gemm(1.0, factor, &self.block, 0.0);
        std::mem::swap(&mut self.scratch, &mut self.block);
        self.pending += 1;
        self.pending_log_bound += factor.norm().ln().max(-MAX_PENDING_LOG_GROWTH);
        if self.pending >= self.refactor_every
            || self.pending_log_bound.abs() > MAX_PENDING_LOG_GROWTH
        {
            self.refactor();
        }
    }

    fn refactor(&mut self) {
        let w = &self.block * &self.q;
        let (q, r_new) = qr_positive(&w);
        let mut r = r_new * &self.r;
        let scale = max_abs_entry(&r);
        if scale > 0.0 && scale.is_finite() {
            r /= scale;
            self.log_scale += scale.ln();
        }
        self.q = q;
        self.r = r;
        let d = self.block.nrows();
        self.block = Matrix::identity(d, d);
        self.pending = 0;
        self.pending_log_bound = 0.0;
    }

    /// `ln σ_max` of the running product.
    pub fn log_sigma_max(&self) -> f64 {
        let current = &self.block * &self.q * &self.r;
        spectral_norm(&current).ln() + self.log_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_positive_reconstructs_with_nonnegative_diagonal() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, -3.0, 1.0, 2.0, 0.2, 4.0, -1.0]);
        let (q, r) = qr_positive(&m);
        assert!((&q * &r - &m).abs().max() < 1e-12);
        assert!(orthogonality_defect(&q) < 1e-14);
        for k in 0..3 {
            assert!(r[(k, k)] >= 0.0);
        }
        assert_eq!(r[(2, 0)], 0.0);
    }

    #[test]
    fn triangular_inverse_matches_lu() {
        let r = Matrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 0.0, 0.5, 3.0, 0.0, 0.0, 4.0]);
        let inv = upper_triangular_inverse(&r).unwrap();
        assert!(identity_residual(&r, &inv) < 1e-14);
        assert!(upper_triangular_inverse(&Matrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn log_product_survives_overflowing_growth() {
        let a = Matrix::from_row_slice(2, 2, &[1e3, 1.0, 0.0, 1e-3]);
        let mut p = LogProduct::new(2);
        for _ in 0..500 {
            p.push(&a);
        }
        let got = p.log_sigma_max();
        assert!(got.is_finite());
        assert!((got / 500.0 - 1e3_f64.ln()).abs() < 1e-3);
    }
}
