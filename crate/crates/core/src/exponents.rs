//! Upper and lower Bohl exponents of directions, subspaces and the full
//! space, estimated as `inf_N sup` / `sup_N inf` of window rates over a
//! threshold grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{qr_positive, upper_triangular_inverse, Matrix};
use crate::propagation::{
    extremes_from_records, propagate_direction, scan_additive, sweep_products, Coefficients,
    LogSolution, Representation, ThresholdExtremes, WindowConfig,
};
use crate::systems::Tabulated;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "x0")]
pub enum Subject {
    Direction(Vec<f64>),
    Subspace(usize),
    Fullspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub threshold: usize,
    pub sup_value: f64,
    pub inf_value: f64,
}

/// Extrapolated `(β̲, β̄)` together with the sup/inf trajectory over the
/// threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BohlEstimate {
    pub lower: f64,
    pub upper: f64,
    pub per_threshold: Vec<ThresholdValue>,
    pub representation: Representation,
    pub subject: Subject,
}

impl BohlEstimate {
    pub(crate) fn from_extremes(
        ext: &ThresholdExtremes,
        rep: Representation,
        subject: Subject,
    ) -> Result<Self> {
        let vals = ext.for_representation(rep);
        let per_threshold: Vec<ThresholdValue> = ext
            .thresholds
            .iter()
            .zip(vals)
            .map(|(&threshold, &(sup_value, inf_value))| ThresholdValue {
                threshold,
                sup_value,
                inf_value,
            })
            .collect();
        let last = per_threshold
            .last()
            .ok_or_else(|| Error::Config("empty threshold grid".into()))?;
        if !(last.sup_value.is_finite() && last.inf_value.is_finite()) {
            return Err(Error::HorizonTooSmall {
                horizon: 0,
                threshold: last.threshold,
            });
        }
        Ok(Self {
            lower: last.inf_value,
            upper: last.sup_value,
            per_threshold,
            representation: rep,
            subject,
        })
    }

    /// `(lower, upper)` at the second-to-last threshold, or the final pair
    /// when the grid has a single threshold.
    pub fn previous(&self) -> (f64, f64) {
        let k = self.per_threshold.len();
        let tv = &self.per_threshold[k.saturating_sub(2)];
        (tv.inf_value, tv.sup_value)
    }

    /// Whether the per-threshold sups are nonincreasing and infs
    /// nondecreasing in `N`.
    pub fn is_monotone(&self) -> bool {
        self.per_threshold.windows(2).all(|w| {
            w[1].sup_value <= w[0].sup_value && w[1].inf_value >= w[0].inf_value
        })
    }

    /// Per-threshold table as CSV (`threshold,sup,inf`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,sup_value,inf_value\n");
        for tv in &self.per_threshold {
            out.push_str(&format!("{},{},{}\n", tv.threshold, tv.sup_value, tv.inf_value));
        }
        out
    }
}

fn check_solution_horizon(sol: &LogSolution, cfg: &WindowConfig) -> Result<()> {
    cfg.validate()?;
    if sol.n_max() < cfg.n_max {
        return Err(Error::HorizonTooSmall {
            horizon: sol.n_max(),
            threshold: cfg.n_last(),
        });
    }
    Ok(())
}

/// Direction exponents under both window families from a single scan:
/// `(all_m, m_beyond_N)`.
pub fn bohl_exponents_direction_both(
    sol: &LogSolution,
    cfg: &WindowConfig,
) -> Result<(BohlEstimate, BohlEstimate)> {
    let mut both = cfg.clone();
    both.representation = Representation::MBeyondN;
    check_solution_horizon(sol, &both)?;
    let ext = scan_additive(&sol.logn, cfg);
    let subject = Subject::Direction(sol.x0.clone());
    Ok((
        BohlEstimate::from_extremes(&ext, Representation::AllM, subject.clone())?,
        BohlEstimate::from_extremes(&ext, Representation::MBeyondN, subject)?,
    ))
}

/// `β̄(x₀)`, `β̲(x₀)` for the direction carried by `sol`.
pub fn bohl_exponents_direction(sol: &LogSolution, cfg: &WindowConfig) -> Result<BohlEstimate> {
    check_solution_horizon(sol, cfg)?;
    let ext = scan_additive(&sol.logn, cfg);
    BohlEstimate::from_extremes(&ext, cfg.representation, Subject::Direction(sol.x0.clone()))
}

fn fullspace_extremes<C: Coefficients + ?Sized>(seq: &C, cfg: &WindowConfig) -> Result<ThresholdExtremes> {
    if seq.dim() == 1 {
        // scalar: σ_max = σ_min = |product|, an additive scan is exact
        let sol = propagate_direction(seq, &[1.0], cfg.n_max)?;
        return Ok(scan_additive(&sol.logn, cfg));
    }
    let records = sweep_products(seq, cfg);
    Ok(extremes_from_records(&records, &cfg.thresholds))
}

/// `β̄(ℝ^d)`, `β̲(ℝ^d)` from the extreme singular values of `Φ(n, m)` per
/// window; these are the sup/inf of `λ(n, m)` over all `x₀` for that
/// window.
pub fn bohl_exponents_fullspace<C: Coefficients + ?Sized>(
    seq: &C,
    cfg: &WindowConfig,
) -> Result<BohlEstimate> {
    cfg.validate()?;
    let ext = fullspace_extremes(seq, cfg)?;
    BohlEstimate::from_extremes(&ext, cfg.representation, Subject::Fullspace)
}

/// Full-space exponents under both window families.
pub fn bohl_exponents_fullspace_both<C: Coefficients + ?Sized>(
    seq: &C,
    cfg: &WindowConfig,
) -> Result<(BohlEstimate, BohlEstimate)> {
    let mut both = cfg.clone();
    both.representation = Representation::MBeyondN;
    both.validate()?;
    let ext = fullspace_extremes(seq, cfg)?;
    Ok((
        BohlEstimate::from_extremes(&ext, Representation::AllM, Subject::Fullspace)?,
        BohlEstimate::from_extremes(&ext, Representation::MBeyondN, Subject::Fullspace)?,
    ))
}

/// Bracket for the exponents of a subspace `L` with `1 < dim L < d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBracket {
    pub dim: usize,
    /// Union of sampled direction intervals inside `L` (inner bound).
    pub inner: (f64, f64),
    /// Singular values of `Φ` restricted to the propagated frame of `L`.
    pub frame: BohlEstimate,
}

/// Restricted factors `r(n)` with `A(n) F(n) = F(n+1) r(n)` for an
/// orthonormal frame `F(0)` of `span(basis)`.
///
/// The frame is propagated forward, so rounding errors pull it toward the
/// dominant directions; subspaces that repel their complement are not
/// tracked faithfully over long horizons.
pub fn restricted_factors<C: Coefficients + ?Sized>(
    seq: &C,
    basis: &[Vec<f64>],
    n_max: usize,
) -> Result<Tabulated> {
    let d = seq.dim();
    let k = basis.len();
    if k == 0 || k > d {
        return Err(Error::Config(format!("subspace basis must have 1..={d} vectors")));
    }
    let mut f = Matrix::zeros(d, k);
    for (j, v) in basis.iter().enumerate() {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        for i in 0..d {
            f[(i, j)] = v[i];
        }
    }
    let (mut frame, r0) = qr_positive(&f);
    if (0..k).any(|i| r0[(i, i)] < 1e-12) {
        return Err(Error::Config("subspace basis is rank deficient".into()));
    }
    let mut a = Vec::with_capacity(n_max);
    let mut a_inv = Vec::with_capacity(n_max);
    for n in 0..n_max {
        let w = seq.with_matrix(n, |m| m * &frame);
        let (q, r) = qr_positive(&w);
        let inv = upper_triangular_inverse(&r).ok_or(Error::QrBreakdown(n))?;
        frame = q;
        a.push(r);
        a_inv.push(inv);
    }
    Ok(Tabulated { dim: k, a, a_inv })
}

/// Exponents of `L = span(basis)`: inner bound from directions sampled in
/// `L`, plus the frame-restricted singular-value estimate.
pub fn bohl_exponents_subspace<C: Coefficients + ?Sized>(
    seq: &C,
    basis: &[Vec<f64>],
    cfg: &WindowConfig,
    inner_samples: usize,
    seed: u64,
) -> Result<SubspaceBracket> {
    cfg.validate()?;
    let factors = restricted_factors(seq, basis, cfg.n_max)?;
    let frame = bohl_exponents_fullspace(&factors, cfg)?;
    let frame = BohlEstimate {
        subject: Subject::Subspace(basis.len()),
        ..frame
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = seq.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in 0..inner_samples.max(basis.len()) {
        let mut x = vec![0.0; d];
        if s < basis.len() {
            x.clone_from(&basis[s]);
        } else {
            for v in basis {
                let c: f64 = rng.random_range(-1.0..1.0);
                for i in 0..d {
                    x[i] += c * v[i];
                }
            }
        }
        if x.iter().all(|&v| v == 0.0) {
            continue;
        }
        let sol = propagate_direction(seq, &x, cfg.n_max)?;
        let est = bohl_exponents_direction(&sol, cfg)?;
        lo = lo.min(est.lower);
        hi = hi.max(est.upper);
    }
    Ok(SubspaceBracket {
        dim: basis.len(),
        inner: (lo, hi),
        frame,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: f64,
    pub best_lambda: f64,
    pub window: (usize, usize),
    pub distance: f64,
    pub realized: bool,
}

/// Result of checking that the window net stays inside the estimated Bohl
/// interval and that interior values are attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationReport {
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub sampled_windows: usize,
    pub outside_windows: usize,
    pub worst_excess: f64,
    pub probes: Vec<ProbeResult>,
    pub passed: bool,
}

const RANDOM_WINDOWS: usize = 512;

/// Checks containment of random long windows in `[lower − tol, upper + tol]`
/// and realizability of `probe_count` evenly spaced values in the interval.
pub fn accumulation_interval_check(
    sol: &LogSolution,
    est: &BohlEstimate,
    cfg: &WindowConfig,
    probe_count: usize,
) -> Result<AccumulationReport> {
    let k = probe_count.max(1);
    let probes: Vec<f64> = if k == 1 {
        vec![0.5 * (est.lower + est.upper)]
    } else {
        (0..k)
            .map(|i| est.lower + (est.upper - est.lower) * i as f64 / (k - 1) as f64)
            .collect()
    };
    accumulation_interval_check_at(sol, est, cfg, &probes)
}

/// As [`accumulation_interval_check`] with explicit probe values.
pub fn accumulation_interval_check_at(
    sol: &LogSolution,
    est: &BohlEstimate,
    cfg: &WindowConfig,
    probes: &[f64],
) -> Result<AccumulationReport> {
    check_solution_horizon(sol, cfg)?;
    let n_last = cfg.n_last();
    let n_max = cfg.n_max;
    let beyond = est.representation == Representation::MBeyondN;
    let tol = (1e-2f64).max(3.0 * (est.upper - est.lower) / (n_last as f64).sqrt());
    let lambda = |n: usize, m: usize| (sol.logn[n] - sol.logn[m]) / (n - m) as f64;

    // (a) random windows with n − m > N_last
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut outside = 0;
    let mut worst_excess = 0.0_f64;
    let min_m = if beyond { n_last + 1 } else { 0 };
    for _ in 0..RANDOM_WINDOWS {
        let len = rng.random_range(n_last + 1..=n_max - min_m);
        let m = rng.random_range(min_m..=n_max - len);
        let l = lambda(m + len, m);
        let excess = (est.lower - l).max(l - est.upper);
        worst_excess = worst_excess.max(excess);
        if excess > tol {
            outside += 1;
        }
    }

    // (b) realizability over the lattice
    let mut best: Vec<(f64, f64, (usize, usize))> =
        probes.iter().map(|_| (f64::INFINITY, f64::NAN, (0, 0))).collect();
    let stride = cfg.stride.max(1);
    for len in cfg.window_lengths().into_iter().filter(|&l| l > n_last) {
        let mut m = min_m;
        while m + len <= n_max {
            let l = lambda(m + len, m);
            for (b, &p) in best.iter_mut().zip(probes) {
                let dist = (l - p).abs();
                if dist < b.0 {
                    *b = (dist, l, (m + len, m));
                }
            }
            m += stride;
        }
    }
    let probes: Vec<ProbeResult> = probes
        .iter()
        .zip(best)
        .map(|(&probe, (distance, best_lambda, window))| ProbeResult {
            probe,
            best_lambda,
            window,
            distance,
            realized: distance <= tol,
        })
        .collect();
    let passed = outside == 0 && probes.iter().all(|p| p.realized);
    Ok(AccumulationReport {
        lower: est.lower,
        upper: est.upper,
        tol,
        sampled_windows: RANDOM_WINDOWS,
        outside_windows: outside,
        worst_excess,
        probes,
        passed,
    })
}

/// Smallest `ln K` with `‖x(n)‖ ≤ K e^{γ(n−m)} ‖x(m)‖` for all `n > m` on the
/// stored horizon (`upper = true`), or the largest `ln K` with
/// `‖x(n)‖ ≥ K e^{γ(n−m)} ‖x(m)‖` (`upper = false`).
pub fn fitted_growth_constant(sol: &LogSolution, gamma: f64, upper: bool) -> f64 {
    let mut best = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut running = f64::NAN;
    for (n, &l) in sol.logn.iter().enumerate() {
        let y = l - gamma * n as f64;
        if n > 0 {
            let v = y - running;
            best = if upper { best.max(v) } else { best.min(v) };
        }
        running = if n == 0 {
            y
        } else if upper {
            running.min(y)
        } else {
            running.max(y)
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{load_system, ScalarPattern, SystemSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_scalar_is_exact() {
        let seq = load_system(&SystemSpec::constant(1, &[2.0], 1000)).unwrap();
        let cfg = WindowConfig::for_horizon(1000);
        let sol = propagate_direction(&seq, &[1.0], 1000).unwrap();
        let est = bohl_exponents_direction(&sol, &cfg).unwrap();
        assert_abs_diff_eq!(est.lower, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(est.upper, 2f64.ln(), epsilon = 1e-12);
        assert!(est.is_monotone());
        let report = accumulation_interval_check(&sol, &est, &cfg, 3).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn periodic_scalar_against_closed_form() {
        let seq = load_system(&SystemSpec::periodic(1, &[vec![1.0], vec![4.0]], 20_000)).unwrap();
        let cfg = WindowConfig::with_n_last(20_000, 1000);
        let sol = propagate_direction(&seq, &[1.0], 20_000).unwrap();
        let est = bohl_exponents_direction(&sol, &cfg).unwrap();
        // closed form: S(n) = ln4·⌊n/2⌋, so |λ − ln2| ≤ ln2/(n−m) < ln2/1000
        assert!((est.lower - 2f64.ln()).abs() < 5e-3);
        assert!((est.upper - 2f64.ln()).abs() < 5e-3);
        assert!(est.upper - 2f64.ln() <= 2f64.ln() / 1000.0 + 1e-12);
        let report = accumulation_interval_check(&sol, &est, &cfg, 3).unwrap();
        assert!(report.worst_excess < 2e-3);
    }

    #[test]
    fn fullspace_diagonal_and_rotation() {
        let diag = load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            4000,
        ))
        .unwrap();
        let cfg = WindowConfig::with_n_last(4000, 400);
        let est = bohl_exponents_fullspace(&diag, &cfg).unwrap();
        assert_abs_diff_eq!(est.upper, 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(est.lower, -(2f64.ln()), epsilon = 1e-9);

        let a = crate::linalg::rotation(1.0) * 1.5;
        let rot = load_system(&SystemSpec::constant(
            2,
            &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]],
            4000,
        ))
        .unwrap();
        let est = bohl_exponents_fullspace(&rot, &cfg).unwrap();
        assert_abs_diff_eq!(est.upper, 1.5f64.ln(), epsilon = 1e-6);
        assert_abs_diff_eq!(est.lower, 1.5f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn horizon_too_small_is_an_error() {
        let seq = load_system(&SystemSpec::constant(1, &[2.0], 100)).unwrap();
        let sol = propagate_direction(&seq, &[1.0], 50).unwrap();
        let cfg = WindowConfig::with_n_last(100, 10);
        assert!(matches!(
            bohl_exponents_direction(&sol, &cfg),
            Err(Error::HorizonTooSmall { .. })
        ));
    }

    #[test]
    fn growth_constant_fit() {
        let seq = load_system(&SystemSpec::periodic(1, &[vec![1.0], vec![4.0]], 200)).unwrap();
        let sol = propagate_direction(&seq, &[1.0], 200).unwrap();
        // γ = ln 2: worst ratio is the single step of size 4 → ln K = ln 4 − ln 2
        let lk = fitted_growth_constant(&sol, 2f64.ln(), true);
        assert_abs_diff_eq!(lk, 2f64.ln(), epsilon = 1e-12);
        let lk = fitted_growth_constant(&sol, 2f64.ln(), false);
        assert_abs_diff_eq!(lk, -(2f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn subspace_bracket_for_plane_in_diagonal_system() {
        let diag = load_system(&SystemSpec::diagonal(
            vec![
                ScalarPattern::Constant(3.0),
                ScalarPattern::Constant(1.5),
                ScalarPattern::Constant(0.5),
            ],
            2000,
        ))
        .unwrap();
        let cfg = WindowConfig::with_n_last(2000, 200);
        // forward frames drift toward dominant directions, so only the
        // leading plane is numerically invariant here
        let plane = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let b = bohl_exponents_subspace(&diag, &plane, &cfg, 4, 1).unwrap();
        assert_abs_diff_eq!(b.frame.upper, 3f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(b.frame.lower, 1.5f64.ln(), epsilon = 1e-9);
        assert!(b.inner.0 >= b.frame.lower - 1e-9 && b.inner.1 <= b.frame.upper + 1e-9);
    }
}
