//! Overflow-free propagation of solutions and windowed log-growth rates.
//!
//! A solution is stored as a unit direction `v(n)` plus the cumulative log
//! norm `L(n)`, so `‖x(n, x₀)‖ = e^{L(n)} ‖x₀‖` never has to be formed.
//! Window rates `λ(n, m) = (L(n) − L(m)) / (n − m)` are then differences of
//! two stored numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    extreme_singular_values, qr_positive, upper_triangular_inverse, LogProduct, Matrix, Vector,
};
use crate::systems::{MatrixSequence, Tabulated};

/// Anything that can hand out `A(n)` and `A(n)⁻¹`.
pub trait Coefficients: Sync {
    fn dim(&self) -> usize;
    fn with_matrix<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R;
    fn with_inverse<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R;
}

impl Coefficients for MatrixSequence {
    fn dim(&self) -> usize {
        MatrixSequence::dim(self)
    }
    fn with_matrix<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.eval(n))
    }
    fn with_inverse<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.eval_inv(n))
    }
}

impl Coefficients for Tabulated {
    fn dim(&self) -> usize {
        self.dim
    }
    fn with_matrix<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.a[n])
    }
    fn with_inverse<R>(&self, n: usize, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.a_inv[n])
    }
}

/// Solution `x(·, x₀)` in log-scaled form.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSolution {
    pub dim: usize,
    /// Unit initial direction.
    pub x0: Vec<f64>,
    /// Row-major `(n_max + 1) × dim` unit directions.
    pub dirs: Vec<f64>,
    /// `L(0..=n_max)`, `L(0) = 0`.
    pub logn: Vec<f64>,
}

impl LogSolution {
    pub fn n_max(&self) -> usize {
        self.logn.len() - 1
    }

    /// The same solution restricted to `0..=n_max`.
    pub fn truncated(&self, n_max: usize) -> LogSolution {
        let n_max = n_max.min(self.n_max());
        LogSolution {
            dim: self.dim,
            x0: self.x0.clone(),
            dirs: self.dirs[..(n_max + 1) * self.dim].to_vec(),
            logn: self.logn[..=n_max].to_vec(),
        }
    }

    pub fn direction(&self, n: usize) -> &[f64] {
        &self.dirs[n * self.dim..(n + 1) * self.dim]
    }

    /// Solution of `a·x₀ + b·y₀` built from the two solutions by linearity.
    pub fn combine(&self, a: f64, other: &LogSolution, b: f64) -> Result<LogSolution> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let len = self.logn.len().min(other.logn.len());
        let d = self.dim;
        let mut dirs = Vec::with_capacity(len * d);
        let mut logn = Vec::with_capacity(len);
        let mut w = vec![0.0; d];
        for n in 0..len {
            let (la, lb) = (self.logn[n], other.logn[n]);
            let top = la.max(lb);
            let ca = a * (la - top).exp();
            let cb = b * (lb - top).exp();
            let (va, vb) = (self.direction(n), other.direction(n));
            for i in 0..d {
                w[i] = ca * va[i] + cb * vb[i];
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroVector);
            }
            dirs.extend(w.iter().map(|x| x / norm));
            logn.push(top + norm.ln());
        }
        let base = logn[0];
        logn.iter_mut().for_each(|l| *l -= base);
        let x0 = dirs[..d].to_vec();
        Ok(LogSolution { dim: d, x0, dirs, logn })
    }
}

fn unit(x0: &[f64]) -> Result<Vec<f64>> {
    let norm = x0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(Error::NonFinite(0));
    }
    Ok(x0.iter().map(|x| x / norm).collect())
}

/// Forward propagation `x(n+1) = A(n) x(n)` for `n < n_max`.
pub fn propagate_direction<C: Coefficients + ?Sized>(
    seq: &C,
    x0: &[f64],
    n_max: usize,
) -> Result<LogSolution> {
    let d = seq.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    if n_max == 0 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    let v0 = unit(x0)?;
    let mut dirs = Vec::with_capacity((n_max + 1) * d);
    let mut logn = Vec::with_capacity(n_max + 1);
    dirs.extend_from_slice(&v0);
    logn.push(0.0);
    let mut v = Vector::from_vec(v0.clone());
    let mut w = Vector::zeros(d);
    let mut acc = 0.0;
    for n in 0..n_max {
        seq.with_matrix(n, |a| w.gemv(1.0, a, &v, 0.0));
        let r = w.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::NonFinite(n));
        }
        v.copy_from(&w);
        v /= r;
        acc += r.ln();
        dirs.extend(v.iter());
        logn.push(acc);
    }
    Ok(LogSolution {
        dim: d,
        x0: v0,
        dirs,
        logn,
    })
}

/// Backward propagation from a terminal direction at `n_max`:
/// `y(n) = A(n)⁻¹ y(n+1)`. The result is the forward solution through
/// `y(0)`, and it is accurate for directions that forward propagation
/// cannot follow (the slowest-growing ones). Near `n_max` the terminal
/// vector has not yet been filtered, so callers wanting a clean solution on
/// `0..=n` should propagate from well beyond `n` and truncate.
pub fn propagate_backward<C: Coefficients + ?Sized>(
    seq: &C,
    terminal: &[f64],
    n_max: usize,
) -> Result<LogSolution> {
    let d = seq.dim();
    if terminal.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: terminal.len(),
        });
    }
    if n_max == 0 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    let mut dirs = vec![0.0; (n_max + 1) * d];
    let mut logn = vec![0.0; n_max + 1];
    let mut v = Vector::from_vec(unit(terminal)?);
    dirs[n_max * d..].copy_from_slice(v.as_slice());
    let mut w = Vector::zeros(d);
    for n in (0..n_max).rev() {
        seq.with_inverse(n, |ai| w.gemv(1.0, ai, &v, 0.0));
        let r = w.norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::NonFinite(n));
        }
        v.copy_from(&w);
        v /= r;
        logn[n] = logn[n + 1] + r.ln();
        dirs[n * d..(n + 1) * d].copy_from_slice(v.as_slice());
    }
    let base = logn[0];
    logn.iter_mut().for_each(|l| *l -= base);
    Ok(LogSolution {
        dim: d,
        x0: dirs[..d].to_vec(),
        dirs,
        logn,
    })
}

/// The `k`-dimensional subspace of slowest-growing solutions, tracked by
/// backward QR iteration `A(n)⁻¹ Q(n+1) = Q(n) R(n)`.
///
/// Solutions through the subspace are `x(n) = Q(n) c(n)` with
/// `c(n+1) = R(n)⁻¹ c(n)`; `factors` holds these restricted coefficients,
/// and `‖x(n)‖ = ‖c(n)‖` because `Q(n)` is orthonormal.
#[derive(Debug, Clone)]
pub struct SlowSubspace {
    /// `Q(0)`, d×k.
    pub frame0: Matrix,
    pub factors: Tabulated,
}

impl SlowSubspace {
    /// Maps restricted coordinates at time 0 to the ambient space.
    pub fn embed(&self, c: &[f64]) -> Vec<f64> {
        (&self.frame0 * Vector::from_column_slice(c)).iter().copied().collect()
    }
}

/// Backward QR from `n_max + lookahead` down to 0 starting from the frame
/// `start` (d×k, full column rank); only the factors on `0..n_max` are kept.
pub fn slow_subspace<C: Coefficients + ?Sized>(
    seq: &C,
    start: &Matrix,
    n_max: usize,
    lookahead: usize,
) -> Result<SlowSubspace> {
    let d = seq.dim();
    let k = start.ncols();
    if start.nrows() != d || k == 0 || k > d {
        return Err(Error::Config(format!("start frame must be {d}×k with 1 ≤ k ≤ {d}")));
    }
    let (mut q, r0) = qr_positive(start);
    if (0..k).any(|i| r0[(i, i)] <= 1e-12 * r0[(0, 0)]) {
        return Err(Error::Config("start frame is rank deficient".into()));
    }
    let mut a = Vec::with_capacity(n_max);
    let mut a_inv = Vec::with_capacity(n_max);
    for n in (0..n_max + lookahead).rev() {
        let w = seq.with_inverse(n, |ai| ai * &q);
        let (q_next, r) = qr_positive(&w);
        q = q_next;
        if n < n_max {
            let r_inv = upper_triangular_inverse(&r).ok_or(Error::QrBreakdown(n))?;
            a.push(r_inv);
            a_inv.push(r);
        }
    }
    a.reverse();
    a_inv.reverse();
    Ok(SlowSubspace {
        frame0: q,
        factors: Tabulated { dim: k, a, a_inv },
    })
}

/// `λ(n, m) = (L(n) − L(m)) / (n − m)`.
pub fn window_log_ratio(sol: &LogSolution, n: usize, m: usize) -> Result<f64> {
    if n <= m {
        return Err(Error::InvalidWindow { n, m });
    }
    if n > sol.n_max() {
        return Err(Error::HorizonTooSmall {
            horizon: sol.n_max(),
            threshold: n,
        });
    }
    Ok((sol.logn[n] - sol.logn[m]) / (n - m) as f64)
}

/// `(ln σ_max Φ(n,m), ln σ_min Φ(n,m))` of the transition matrix
/// `Φ(n, m) = A(n−1) ⋯ A(m)`.
pub fn extreme_window_growth<C: Coefficients + ?Sized>(
    seq: &C,
    n: usize,
    m: usize,
) -> Result<(f64, f64)> {
    if n <= m {
        return Err(Error::InvalidWindow { n, m });
    }
    let d = seq.dim();
    let mut fwd = LogProduct::new(d);
    let mut inv = LogProduct::new(d);
    for k in m..n {
        seq.with_matrix(k, |a| fwd.push(a));
        seq.with_inverse(k, |ai| inv.push(&ai.transpose()));
    }
    Ok((fwd.log_sigma_max(), -inv.log_sigma_max()))
}

/// Which window family the limits range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `n − m > N`, any `m`.
    AllM,
    /// `n − m > N` and `m > N`.
    MBeyondN,
}

/// Window enumeration policy for the nets `λ(n, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub n_max: usize,
    /// Increasing window thresholds `N`; the last one is `N_last`.
    pub thresholds: Vec<usize>,
    pub representation: Representation,
    /// Subsampling stride for window starts `m` (1 = every start).
    pub stride: usize,
    /// Window lengths per octave of the logarithmic length lattice; 0 scans
    /// every length.
    pub lengths_per_octave: usize,
    /// Number of evenly spaced starts for transition-matrix sweeps.
    pub sweep_starts: usize,
}

pub const EXHAUSTIVE_STRIDE_LIMIT: usize = 10_000;

impl WindowConfig {
    /// Defaults: thresholds `2⁴, 2⁵, …` below `N_last = n_max / 8`, then
    /// `N_last` itself; stride 1 up to `10⁴` steps, then the largest power of
    /// two not above `n_max / 2¹³`.
    pub fn for_horizon(n_max: usize) -> Self {
        Self::with_n_last(n_max, n_max / 8)
    }

    pub fn with_n_last(n_max: usize, n_last: usize) -> Self {
        let n_last = n_last.max(1);
        let mut thresholds: Vec<usize> = (4..usize::BITS)
            .map(|k| 1usize << k)
            .take_while(|&t| t < n_last)
            .collect();
        thresholds.push(n_last);
        let stride = if n_max <= EXHAUSTIVE_STRIDE_LIMIT {
            1
        } else {
            // a power of two keeps starts aligned with dyadic structure
            let s = (n_max >> 13).max(1);
            1 << (usize::BITS - 1 - s.leading_zeros())
        };
        Self {
            n_max,
            thresholds,
            representation: Representation::AllM,
            stride,
            lengths_per_octave: 8,
            sweep_starts: 16,
        }
    }

    pub fn n_last(&self) -> usize {
        *self.thresholds.last().expect("validated config has thresholds")
    }

    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        self
    }

    /// Every window length, every start.
    pub fn exhaustive(mut self) -> Self {
        self.stride = 1;
        self.lengths_per_octave = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("threshold grid is empty".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        let n_last = self.n_last();
        let needed = match self.representation {
            Representation::AllM => n_last + 1,
            Representation::MBeyondN => 2 * n_last + 2,
        };
        if needed > self.n_max {
            return Err(Error::HorizonTooSmall {
                horizon: self.n_max,
                threshold: n_last,
            });
        }
        Ok(())
    }

    /// The scanned window lengths, all `> thresholds[0]`.
    pub fn window_lengths(&self) -> Vec<usize> {
        let lo = self.thresholds[0] + 1;
        if lo > self.n_max {
            return Vec::new();
        }
        if self.lengths_per_octave == 0 {
            return (lo..=self.n_max).collect();
        }
        let ratio = 2f64.powf(1.0 / self.lengths_per_octave as f64);
        let mut out = Vec::new();
        let mut x = lo as f64;
        while x <= self.n_max as f64 {
            out.push(x.round() as usize);
            x *= ratio;
        }
        for &t in &self.thresholds {
            out.push(t + 1);
            out.push(2 * t + 2);
            if self.n_max > t + 1 {
                out.push(self.n_max - t - 1);
            }
        }
        out.push(self.n_max);
        out.retain(|&l| l >= lo && l <= self.n_max);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Window starts used for transition-matrix sweeps.
    pub(crate) fn sweep_start_points(&self) -> Vec<usize> {
        let min_len = self.thresholds[0] + 1;
        if self.n_max < min_len {
            return Vec::new();
        }
        let last_start = self.n_max - min_len;
        let mut starts = vec![0];
        let s = self.sweep_starts.max(1);
        for k in 0..s {
            starts.push(last_start * k / s);
        }
        for &t in &self.thresholds {
            starts.push(t + 1);
        }
        starts.retain(|&m| m <= last_start);
        starts.sort_unstable();
        starts.dedup();
        starts
    }
}

/// `(sup, inf)` of the window rates for every threshold, under both window
/// families.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdExtremes {
    pub thresholds: Vec<usize>,
    pub all_m: Vec<(f64, f64)>,
    pub beyond: Vec<(f64, f64)>,
}

struct LengthExtremes {
    len: usize,
    all: (f64, f64),
    beyond: Vec<(f64, f64)>,
}

fn empty_extremes(t: usize) -> Vec<(f64, f64)> {
    vec![(f64::NEG_INFINITY, f64::INFINITY); t]
}

impl ThresholdExtremes {
    fn from_lengths(thresholds: &[usize], per_len: &[LengthExtremes]) -> Self {
        let t = thresholds.len();
        let mut all_m = empty_extremes(t);
        let mut beyond = empty_extremes(t);
        for le in per_len {
            let l = le.len as f64;
            for j in 0..t {
                if le.len <= thresholds[j] {
                    break;
                }
                let (hi, lo) = le.all;
                all_m[j].0 = all_m[j].0.max(hi / l);
                all_m[j].1 = all_m[j].1.min(lo / l);
                let (hi, lo) = le.beyond[j];
                beyond[j].0 = beyond[j].0.max(hi / l);
                beyond[j].1 = beyond[j].1.min(lo / l);
            }
        }
        Self {
            thresholds: thresholds.to_vec(),
            all_m,
            beyond,
        }
    }

    pub fn for_representation(&self, rep: Representation) -> &[(f64, f64)] {
        match rep {
            Representation::AllM => &self.all_m,
            Representation::MBeyondN => &self.beyond,
        }
    }
}

/// Sup/inf of `(L(m+ℓ) − L(m)) / ℓ` over the window lattice, from one pass
/// per length. Starts are visited in descending order so the suffix extremes
/// for `m > N` can be read off at each threshold.
pub fn scan_additive(logn: &[f64], cfg: &WindowConfig) -> ThresholdExtremes {
    let n_max = cfg.n_max.min(logn.len() - 1);
    let thresholds = &cfg.thresholds;
    let t = thresholds.len();
    let lengths: Vec<usize> = cfg
        .window_lengths()
        .into_iter()
        .filter(|&l| l <= n_max)
        .collect();
    let stride = cfg.stride.max(1);
    let per_len: Vec<LengthExtremes> = lengths
        .par_iter()
        .map(|&len| {
            let top = n_max - len;
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::INFINITY;
            let mut beyond = empty_extremes(t);
            let mut j = t;
            let mut m = top - top % stride;
            loop {
                while j > 0 && m <= thresholds[j - 1] {
                    beyond[j - 1] = (hi, lo);
                    j -= 1;
                }
                let g = logn[m + len] - logn[m];
                hi = hi.max(g);
                lo = lo.min(g);
                if m < stride {
                    break;
                }
                m -= stride;
            }
            while j > 0 {
                beyond[j - 1] = (hi, lo);
                j -= 1;
            }
            LengthExtremes {
                len,
                all: (hi, lo),
                beyond,
            }
        })
        .collect();
    ThresholdExtremes::from_lengths(thresholds, &per_len)
}

/// One window `(m + len, m)` with `ln σ_max`, `ln σ_min` of its transition
/// matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRecord {
    pub m: usize,
    pub len: usize,
    pub log_sigma_max: f64,
    pub log_sigma_min: f64,
}

/// Sweeps forward from each start point, recording extreme singular-value
/// growth at every lattice length.
pub fn sweep_products<C: Coefficients + ?Sized>(seq: &C, cfg: &WindowConfig) -> Vec<WindowRecord> {
    let d = seq.dim();
    let lengths = cfg.window_lengths();
    let starts = cfg.sweep_start_points();
    let per_start: Vec<Vec<WindowRecord>> = starts
        .par_iter()
        .map(|&m| {
            let mut fwd = LogProduct::new(d);
            let mut inv = LogProduct::new(d);
            let mut inv_t = Matrix::zeros(d, d);
            let mut out = Vec::new();
            let mut next = 0;
            for k in m..cfg.n_max {
                seq.with_matrix(k, |a| fwd.push(a));
                seq.with_inverse(k, |ai| {
                    ai.transpose_to(&mut inv_t);
                });
                inv.push(&inv_t);
                let len = k + 1 - m;
                while next < lengths.len() && lengths[next] < len {
                    next += 1;
                }
                if next < lengths.len() && lengths[next] == len {
                    out.push(WindowRecord {
                        m,
                        len,
                        log_sigma_max: fwd.log_sigma_max(),
                        log_sigma_min: -inv.log_sigma_max(),
                    });
                }
            }
            out
        })
        .collect();
    per_start.into_iter().flatten().collect()
}

/// Threshold extremes of `ln σ_max / len` (sup) and `ln σ_min / len` (inf)
/// over sweep records.
pub fn extremes_from_records(records: &[WindowRecord], thresholds: &[usize]) -> ThresholdExtremes {
    let t = thresholds.len();
    let mut all_m = empty_extremes(t);
    let mut beyond = empty_extremes(t);
    for r in records {
        let l = r.len as f64;
        let (hi, lo) = (r.log_sigma_max / l, r.log_sigma_min / l);
        for j in 0..t {
            if r.len <= thresholds[j] {
                break;
            }
            all_m[j].0 = all_m[j].0.max(hi);
            all_m[j].1 = all_m[j].1.min(lo);
            if r.m > thresholds[j] {
                beyond[j].0 = beyond[j].0.max(hi);
                beyond[j].1 = beyond[j].1.min(lo);
            }
        }
    }
    ThresholdExtremes {
        thresholds: thresholds.to_vec(),
        all_m,
        beyond,
    }
}

/// Brute-force `(ln σ_max, ln σ_min)` of an explicitly formed product.
/// Only usable for short windows.
pub fn brute_force_window_growth<C: Coefficients + ?Sized>(seq: &C, n: usize, m: usize) -> (f64, f64) {
    let d = seq.dim();
    let mut p = Matrix::identity(d, d);
    for k in m..n {
        p = seq.with_matrix(k, |a| a * &p);
    }
    let (hi, lo) = extreme_singular_values(&p);
    (hi.ln(), lo.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{load_system, ScalarPattern, SystemSpec};
    use approx::assert_abs_diff_eq;

    fn constant2() -> MatrixSequence {
        load_system(&SystemSpec::constant(1, &[2.0], 100)).unwrap()
    }

    fn periodic14() -> MatrixSequence {
        load_system(&SystemSpec::periodic(1, &[vec![1.0], vec![4.0]], 100)).unwrap()
    }

    fn diag_half() -> MatrixSequence {
        load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            100,
        ))
        .unwrap()
    }

    #[test]
    fn constant_scalar_log_norms() {
        let sol = propagate_direction(&constant2(), &[1.0], 10).unwrap();
        for n in 0..=10 {
            assert_abs_diff_eq!(sol.logn[n], n as f64 * 2f64.ln(), epsilon = 1e-13);
            assert_eq!(sol.direction(n), &[1.0]);
        }
    }

    #[test]
    fn diagonal_decaying_axis() {
        let sol = propagate_direction(&diag_half(), &[0.0, 1.0], 10).unwrap();
        for n in 0..=10 {
            assert_abs_diff_eq!(sol.logn[n], -(n as f64) * 2f64.ln(), epsilon = 1e-13);
        }
    }

    #[test]
    fn periodic_log_norms_match_product_oracle() {
        let sol = propagate_direction(&periodic14(), &[1.0], 6).unwrap();
        // direct product of |a(k)|
        let a = [1.0f64, 4.0, 1.0, 4.0, 1.0, 4.0];
        let mut prod = 1.0;
        let mut expect = vec![0.0];
        for x in a {
            prod *= x;
            expect.push(f64::ln(prod));
        }
        for n in 0..=6 {
            assert_abs_diff_eq!(sol.logn[n], expect[n], epsilon = 1e-13);
        }
    }

    #[test]
    fn window_ratios() {
        let sol = propagate_direction(&constant2(), &[3.0], 12).unwrap();
        assert_abs_diff_eq!(window_log_ratio(&sol, 10, 3).unwrap(), 2f64.ln(), epsilon = 1e-14);
        let per = propagate_direction(&periodic14(), &[1.0], 6).unwrap();
        assert_abs_diff_eq!(window_log_ratio(&per, 2, 1).unwrap(), 4f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            window_log_ratio(&per, 3, 0).unwrap(),
            4f64.ln() / 3.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            window_log_ratio(&per, 3, 3),
            Err(Error::InvalidWindow { .. })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            propagate_direction(&diag_half(), &[0.0, 0.0], 5),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn extreme_growth_examples() {
        let (hi, lo) = extreme_window_growth(&constant2(), 12, 2).unwrap();
        assert_abs_diff_eq!(hi, 10.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lo, 10.0 * 2f64.ln(), epsilon = 1e-12);

        let (hi, lo) = extreme_window_growth(&diag_half(), 5, 0).unwrap();
        assert_abs_diff_eq!(hi, 5.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lo, -5.0 * 2f64.ln(), epsilon = 1e-12);

        let a = crate::linalg::rotation(1.0) * 1.5;
        let rot = load_system(&SystemSpec::constant(
            2,
            &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]],
            20,
        ))
        .unwrap();
        let (hi, lo) = extreme_window_growth(&rot, 8, 3).unwrap();
        let (bh, bl) = brute_force_window_growth(&rot, 8, 3);
        assert_abs_diff_eq!(hi, 5.0 * 1.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lo, 5.0 * 1.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, bh, epsilon = 1e-12);
        assert_abs_diff_eq!(lo, bl, epsilon = 1e-12);
        assert!(extreme_window_growth(&rot, 3, 3).is_err());
    }

    #[test]
    fn backward_propagation_finds_decaying_solution() {
        let a = load_system(&SystemSpec::constant(2, &[2.0, 1.0, 0.0, 0.5], 10)).unwrap();
        let sol = propagate_backward(&a, &[0.3, 0.7], 800).unwrap().truncated(400);
        assert_eq!(sol.n_max(), 400);
        // stable eigenvector of [[2,1],[0,1/2]] is (1, -1.5)
        let v = sol.direction(0);
        assert_abs_diff_eq!(v[1] / v[0], -1.5, epsilon = 1e-9);
        let rate = window_log_ratio(&sol, 400, 100).unwrap();
        assert_abs_diff_eq!(rate, -(2f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn slow_subspace_of_triangular_system() {
        let a = load_system(&SystemSpec::constant(2, &[2.0, 1.0, 0.0, 0.5], 10)).unwrap();
        let start = Matrix::from_column_slice(2, 1, &[0.3, 0.7]);
        let slow = slow_subspace(&a, &start, 300, 300).unwrap();
        let v = slow.embed(&[1.0]);
        assert_abs_diff_eq!(v[1] / v[0], -1.5, epsilon = 1e-9);
        let sol = propagate_direction(&slow.factors, &[1.0], 300).unwrap();
        assert_abs_diff_eq!(window_log_ratio(&sol, 300, 0).unwrap(), -(2f64.ln()), epsilon = 1e-9);
        // the full space is invariant; restricted factors are conjugate to A
        let full = slow_subspace(&a, &Matrix::identity(2, 2), 50, 0).unwrap();
        let (hi, _) = extreme_window_growth(&full.factors, 50, 0).unwrap();
        let (bh, _) = brute_force_window_growth(&a, 50, 0);
        assert_abs_diff_eq!(hi, bh, epsilon = 1e-9);
    }

    #[test]
    fn combine_is_linear() {
        let seq = diag_half();
        let a = propagate_direction(&seq, &[1.0, 0.0], 30).unwrap();
        let b = propagate_direction(&seq, &[0.0, 1.0], 30).unwrap();
        let c = a.combine(1.0, &b, 2.0).unwrap();
        let direct = propagate_direction(&seq, &[1.0, 2.0], 30).unwrap();
        for n in 0..=30 {
            assert_abs_diff_eq!(c.logn[n], direct.logn[n], epsilon = 1e-12);
        }
        assert!(a.combine(1.0, &a, -1.0).is_err());
    }

    #[test]
    fn default_config_shape() {
        let cfg = WindowConfig::for_horizon(100_000);
        assert_eq!(cfg.n_last(), 12_500);
        assert_eq!(cfg.thresholds[0], 16);
        assert!(cfg.validate().is_ok());
        let lens = cfg.window_lengths();
        assert!(lens.windows(2).all(|w| w[0] < w[1]));
        assert!(lens.contains(&12_501));
        assert_eq!(*lens.last().unwrap(), 100_000);
        let small = WindowConfig::with_n_last(100, 60);
        assert!(small.clone().with_representation(Representation::MBeyondN).validate().is_err());
        assert!(small.validate().is_ok());
    }

    #[test]
    fn lattice_scan_matches_exhaustive_on_lattice_lengths() {
        let seq = periodic14();
        let sol = propagate_direction(&seq, &[1.0], 400).unwrap();
        let cfg = WindowConfig::with_n_last(400, 40);
        let lat = scan_additive(&sol.logn, &cfg);
        let ex = scan_additive(&sol.logn, &cfg.clone().exhaustive());
        for j in 0..cfg.thresholds.len() {
            // lattice is an inner bound of the exhaustive scan
            assert!(lat.all_m[j].0 <= ex.all_m[j].0 + 1e-15);
            assert!(lat.all_m[j].1 >= ex.all_m[j].1 - 1e-15);
        }
        // brute-force oracle for the exhaustive last threshold
        let n_last = cfg.n_last();
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for m in 0..=400 {
            for n in (m + n_last + 1)..=400 {
                let l = (sol.logn[n] - sol.logn[m]) / (n - m) as f64;
                hi = hi.max(l);
                lo = lo.min(l);
            }
        }
        let j = cfg.thresholds.len() - 1;
        assert_abs_diff_eq!(ex.all_m[j].0, hi, epsilon = 1e-14);
        assert_abs_diff_eq!(ex.all_m[j].1, lo, epsilon = 1e-14);
    }
}
