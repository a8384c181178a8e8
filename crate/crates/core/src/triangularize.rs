//! Discrete QR reduction `A(n) T(n) = T(n+1) B(n)` to an orthogonally
//! equivalent upper triangular system.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{qr_positive, upper_triangular_inverse, Matrix};
use crate::propagation::Coefficients;
use crate::systems::{matrices_to_json, MatrixSequence, Tabulated, TransformSequence};

pub const DEFAULT_CHECKPOINT_STRIDE: usize = 1024;

/// Upper triangular normal form over `[0, n_max)`.
#[derive(Debug, Clone)]
pub struct TriangularForm {
    pub dim: usize,
    pub n_max: usize,
    /// `B(n)`, `B(n)⁻¹` for `n < n_max`; diagonal strictly positive.
    pub b: Tabulated,
    /// `max_n ‖T(n+1) B(n) − A(n) T(n)‖_F`.
    pub residual: f64,
    /// `max_n ‖T(n)ᵀ T(n) − I‖_F`.
    pub orthogonality_defect: f64,
    checkpoints: Vec<Matrix>,
    checkpoint_stride: usize,
    a: Arc<Tabulated>,
}

fn frob_defect(t: &Matrix) -> f64 {
    let d = t.ncols();
    (t.transpose() * t - Matrix::identity(d, d)).norm()
}

/// QR-factorizes `A(n) T(n) = T(n+1) B(n)` from `T(0) = I` with the sign
/// convention `diag B(n) > 0`.
pub fn qr_normal_form(seq: &MatrixSequence, n_max: usize) -> Result<TriangularForm> {
    if n_max == 0 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    let table = Arc::new(seq.tabulate(n_max)?);
    qr_normal_form_table(table, DEFAULT_CHECKPOINT_STRIDE)
}

pub fn qr_normal_form_table(a: Arc<Tabulated>, checkpoint_stride: usize) -> Result<TriangularForm> {
    let d = a.dim;
    let n_max = a.len();
    let stride = checkpoint_stride.max(1);
    let mut t = Matrix::identity(d, d);
    let mut bs = Vec::with_capacity(n_max);
    let mut b_inv = Vec::with_capacity(n_max);
    let mut checkpoints = vec![t.clone()];
    let mut residual = 0.0_f64;
    let mut defect = 0.0_f64;
    for n in 0..n_max {
        let w = a.with_matrix(n, |m| m * &t);
        let scale = w.norm();
        let (q, r) = qr_positive(&w);
        if (0..d).any(|k| !(r[(k, k)] > 1e-14 * scale)) {
            return Err(Error::QrBreakdown(n));
        }
        residual = residual.max((&q * &r - &w).norm());
        defect = defect.max(frob_defect(&q));
        b_inv.push(upper_triangular_inverse(&r).ok_or(Error::QrBreakdown(n))?);
        bs.push(r);
        t = q;
        if (n + 1) % stride == 0 {
            checkpoints.push(t.clone());
        }
    }
    Ok(TriangularForm {
        dim: d,
        n_max,
        b: Tabulated {
            dim: d,
            a: bs,
            a_inv: b_inv,
        },
        residual,
        orthogonality_defect: defect,
        checkpoints,
        checkpoint_stride: stride,
        a,
    })
}

impl TriangularForm {
    /// `T(n)` for `n ≤ n_max`, recomputed from the nearest checkpoint.
    pub fn frame(&self, n: usize) -> Matrix {
        assert!(n <= self.n_max, "frame index {n} beyond horizon {}", self.n_max);
        let c = n / self.checkpoint_stride;
        let mut t = self.checkpoints[c].clone();
        for k in c * self.checkpoint_stride..n {
            let w = &self.a.a[k] * &t;
            t = qr_positive(&w).0;
        }
        t
    }

    /// All frames `T(0..=n_max)`, computed in one sequential pass.
    pub fn frames(&self) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(self.n_max + 1);
        let mut t = self.checkpoints[0].clone();
        out.push(t.clone());
        for k in 0..self.n_max {
            t = qr_positive(&(&self.a.a[k] * &t)).0;
            out.push(t.clone());
        }
        out
    }

    /// Frames as a transform sequence (orthogonal, so both bounds are 1).
    pub fn frames_as_transform(&self) -> TransformSequence {
        let frames = self.frames();
        let inv: Vec<Matrix> = frames.iter().map(|t| t.transpose()).collect();
        let table = Tabulated {
            dim: self.dim,
            a: frames,
            a_inv: inv,
        };
        let seq = table.into_sequence().with_declared_bounds(1.0, 1.0);
        TransformSequence::new(seq)
    }

    /// `B` as a sequence defined on `[0, n_max)`.
    pub fn b_sequence(&self) -> MatrixSequence {
        self.b.clone().into_sequence()
    }

    pub fn b_json(&self) -> String {
        matrices_to_json(&self.b.a)
    }

    pub fn t_json(&self) -> String {
        matrices_to_json(&self.frames())
    }

    /// Diagonal entry `k` of `B` as a scalar table.
    pub fn diagonal_table(&self, k: usize) -> Tabulated {
        let a: Vec<Matrix> = self
            .b
            .a
            .iter()
            .map(|b| Matrix::from_element(1, 1, b[(k, k)]))
            .collect();
        let a_inv = a.iter().map(|x| x.map(|v| 1.0 / v)).collect();
        Tabulated { dim: 1, a, a_inv }
    }

    /// Leading `k×k` (`leading = true`) or trailing `(d−k)×(d−k)` block of `B`.
    pub fn block_table(&self, k: usize, leading: bool) -> Tabulated {
        let d = self.dim;
        let (start, size) = if leading { (0, k) } else { (k, d - k) };
        let a: Vec<Matrix> = self
            .b
            .a
            .iter()
            .map(|b| b.view((start, start), (size, size)).into_owned())
            .collect();
        // inverse of a block of a triangular matrix is the block of the inverse
        let a_inv = self
            .b
            .a_inv
            .iter()
            .map(|b| b.view((start, start), (size, size)).into_owned())
            .collect();
        Tabulated { dim: size, a, a_inv }
    }
}

/// `n ↦ [B(n)_kk]` for each `k`.
pub fn diagonal_part(tri: &TriangularForm) -> Vec<MatrixSequence> {
    (0..tri.dim)
        .map(|k| tri.diagonal_table(k).into_sequence())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rotation;
    use crate::systems::{load_system, transform, ScalarPattern, SystemSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn triangular_input_is_a_fixed_point() {
        let seq = load_system(&SystemSpec::upper_triangular(
            2,
            &[vec![2.0, 1.0, 0.0, 0.5], vec![1.0, -3.0, 0.0, 3.0]],
            50,
        ))
        .unwrap();
        let tri = qr_normal_form(&seq, 50).unwrap();
        for n in 0..50 {
            assert!((tri.b.a[n].clone() - seq.eval(n)).abs().max() < 1e-14);
            assert!((tri.frame(n) - Matrix::identity(2, 2)).abs().max() < 1e-14);
        }
    }

    #[test]
    fn rotation_scale_becomes_scalar() {
        let a = rotation(0.4) * 1.5;
        let seq = load_system(&SystemSpec::constant(
            2,
            &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]],
            100,
        ))
        .unwrap();
        let tri = qr_normal_form(&seq, 100).unwrap();
        for b in &tri.b.a {
            // explicit QR of a rotation-scale matrix: R = r·I
            assert_abs_diff_eq!(b[(0, 0)], 1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(b[(1, 1)], 1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(b[(0, 1)], 0.0, epsilon = 1e-12);
        }
        let diag = diagonal_part(&tri);
        assert_eq!(diag.len(), 2);
        assert_abs_diff_eq!(diag[1].eval(7)[(0, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_system_and_parts() {
        let seq = load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            10,
        ))
        .unwrap();
        let tri = qr_normal_form(&seq, 10).unwrap();
        let parts = diagonal_part(&tri);
        assert_eq!(parts[0].eval(3)[(0, 0)], 2.0);
        assert_eq!(parts[1].eval(3)[(0, 0)], 0.5);
    }

    #[test]
    fn frames_reproduce_b_by_transform() {
        let seq = load_system(&SystemSpec::random_qdq(3, 5, 0.5, 2.0, 3000)).unwrap();
        let tri = qr_normal_form(&seq, 3000).unwrap();
        assert!(tri.residual <= 1e-9 * (1.0 + seq.norm_bound));
        assert!(tri.orthogonality_defect <= 1e-10);
        let t = tri.frames_as_transform();
        let b = transform(&seq, &t).unwrap();
        for n in [0, 1, 1023, 1024, 1500, 2999] {
            assert!((b.eval(n) - &tri.b.a[n]).abs().max() < 1e-9, "n = {n}");
            assert!((tri.frame(n) - t.eval(n)).abs().max() == 0.0);
        }
        for n in (0..3000).step_by(97) {
            let na = crate::linalg::spectral_norm(&seq.eval(n));
            let nb = crate::linalg::spectral_norm(&tri.b.a[n]);
            assert_abs_diff_eq!(na, nb, epsilon = 1e-9);
        }
    }
}
