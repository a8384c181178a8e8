//! Finite-horizon approximations of the Bohl spectrum `Σ_B`, the Bohl
//! dichotomy spectrum `Σ_BD` and the exponential dichotomy spectrum `Σ_ED`.
//!
//! `Σ_ED` is computed from the diagonal of the QR normal form (each diagonal
//! entry is a scalar system whose spectrum is its Bohl interval) and
//! cross-checked by classifying a γ-grid with block exponents of the
//! triangular system. `Σ_B` is a union of Bohl intervals over a finite
//! direction sample and is therefore an inner approximation; `Σ_BD` is its
//! closure, cross-checked by classifying a γ-grid with the Bohl dichotomy
//! criterion.

mod interval;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use interval::{
    contained_in_fattened, directed_hausdorff, distance_to_set, hausdorff, merge_intervals,
    Interval,
};

use crate::error::{Error, Result};
use crate::exponents::{
    bohl_exponents_direction, bohl_exponents_fullspace, fitted_growth_constant, BohlEstimate,
};
use crate::linalg::Matrix;
use crate::propagation::{
    propagate_direction, slow_subspace, Representation, SlowSubspace, WindowConfig,
};
use crate::systems::{MatrixSequence, Tabulated};
use crate::triangularize::{qr_normal_form_table, TriangularForm, DEFAULT_CHECKPOINT_STRIDE};

/// Numerical resolution of the spectrum computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub window: WindowConfig,
    /// γ-grid spacing and merge gap.
    pub grid_tol: f64,
    /// Margin floor for dichotomy verdicts.
    pub alpha_min: f64,
    /// Sphere-lattice directions per dimension (sample size `64·d` by default).
    pub sphere_samples_per_dim: usize,
    /// Directions sampled inside each slow subspace of dimension
    /// `k = 1..d−1` beyond its `k` frame vectors.
    pub slow_samples_per_subspace: usize,
    pub seed: u64,
    pub bisection_iters: usize,
    /// Largest dimension for which the γ-grid cross-check of `Σ_ED` runs.
    pub cross_check_max_dim: usize,
}

impl SpectralConfig {
    pub fn for_horizon(n_max: usize) -> Self {
        Self::from_window(WindowConfig::for_horizon(n_max))
    }

    pub fn from_window(window: WindowConfig) -> Self {
        Self {
            window,
            grid_tol: 1e-2,
            alpha_min: 1e-2,
            sphere_samples_per_dim: 64,
            slow_samples_per_subspace: 8,
            seed: 0,
            bisection_iters: 20,
            cross_check_max_dim: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if !(self.grid_tol > 0.0 && self.grid_tol.is_finite()) {
            return Err(Error::Config("grid_tol must be positive".into()));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min.is_finite()) {
            return Err(Error::Config("alpha_min must be positive".into()));
        }
        Ok(())
    }

    /// Tolerance `2·grid_tol` for set relations between spectra.
    pub fn relation_tol(&self) -> f64 {
        2.0 * self.grid_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Bohl,
    BohlDichotomy,
    ExponentialDichotomy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub route: String,
    pub intervals: Vec<Interval>,
    pub hausdorff: f64,
    pub tolerance: f64,
    pub agrees: bool,
}

/// `min`/`max` of the spectrum against the full-space Bohl exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointCheck {
    pub fullspace_lower: f64,
    pub fullspace_upper: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    pub tolerance: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDiagnostics {
    pub route: String,
    pub horizon: usize,
    pub n_last: usize,
    pub thresholds: Vec<usize>,
    pub representation: Representation,
    pub direction_samples: usize,
    pub grid_tol: f64,
    pub alpha_min: f64,
    /// Set when sampling can only under-approximate the true set.
    pub inner_approximation: bool,
    pub interval_count_ok: bool,
    pub filtration_consistent: bool,
    pub cross_check: Option<CrossCheck>,
    pub endpoint_check: Option<EndpointCheck>,
    pub notes: Vec<String>,
}

/// A spectrum as a sorted disjoint union of closed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub kind: SpectrumKind,
    pub intervals: Vec<Interval>,
    pub filtration_dims: Vec<usize>,
    pub search_box: Interval,
    pub method: MethodDiagnostics,
}

impl SpectrumResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spectrum serializes")
    }

    pub fn min(&self) -> f64 {
        self.intervals.first().map_or(f64::NAN, |i| i.lo)
    }

    pub fn max(&self) -> f64 {
        self.intervals.last().map_or(f64::NAN, |i| i.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DichotomyMode {
    Bd,
    Ed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Resolvent,
    Spectrum,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x0: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    /// Fitted `ln C` of the dichotomy estimate for this solution at the
    /// verdict's rate, when computed.
    pub fitted_log_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaVerdict {
    pub gamma: f64,
    pub mode: DichotomyMode,
    pub verdict: Verdict,
    /// The uniform margin `α` found (negative or below `alpha_min` when the
    /// verdict is not resolvent).
    pub margin: f64,
    pub alpha_min: f64,
    /// `(dim L₁, dim L₂)` estimates of the decaying/growing splitting.
    pub split_dims: (usize, usize),
    pub witnesses: Vec<Witness>,
}

/// Dimension estimates of `S_γ` and `M_γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDims {
    pub gamma: f64,
    pub dim_s: usize,
    pub dim_m: usize,
    /// Indices of triangular basis vectors certified to decay.
    pub basis_witness: Vec<usize>,
    /// Set when γ is not resolved as resolvent; the counts are then only
    /// heuristic.
    pub heuristic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationReport {
    pub dims: Vec<usize>,
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionOrigin {
    Basis,
    Sphere,
    /// Inside the slowest-growing subspace of dimension `level`.
    SlowSubspace,
    User,
}

/// Bohl estimate of one sampled solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSample {
    pub origin: DirectionOrigin,
    /// Dimension of the subspace the direction was drawn from.
    pub level: usize,
    pub x0: Vec<f64>,
    pub estimate: BohlEstimate,
}

impl DirectionSample {
    fn interval(&self) -> Interval {
        Interval::new(self.estimate.lower, self.estimate.upper)
    }
}

/// Deterministic unit directions covering the projective space: a half
/// circle for `d = 2`, a Fibonacci lattice for `d = 3`, seeded Gaussian
/// samples otherwise.
pub fn sphere_lattice(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f3759df);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        }
    }
}

fn same_line(a: &[f64], b: &[f64]) -> bool {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb) - 1.0).abs() < 1e-12
}

/// Numerical rank of a set of vectors.
fn rank(vectors: &[&[f64]], d: usize) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let m = Matrix::from_fn(vectors.len(), d, |i, j| vectors[i][j]);
    let sv = m.svd(false, false).singular_values;
    let top = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    sv.iter().filter(|&&s| s > 1e-8 * top.max(1.0)).count()
}

/// Spectrum set on a γ-grid with bisection refinement of every verdict
/// change.
fn grid_spectrum<F>(bx: Interval, step: f64, iters: usize, is_spectrum: F) -> Vec<Interval>
where
    F: Fn(f64) -> bool + Sync,
{
    let count = ((bx.width() / step).ceil() as usize).max(1);
    let grid: Vec<f64> = (0..=count)
        .map(|i| (bx.lo + step * i as f64).min(bx.hi))
        .collect();
    let flags: Vec<bool> = grid.par_iter().map(|&g| is_spectrum(g)).collect();
    let refine = |mut res: f64, mut spec: f64| {
        for _ in 0..iters {
            let mid = 0.5 * (res + spec);
            if is_spectrum(mid) {
                spec = mid;
            } else {
                res = mid;
            }
        }
        spec
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < grid.len() && flags[i + 1] {
            i += 1;
        }
        let lo = if start == 0 {
            grid[0]
        } else {
            refine(grid[start - 1], grid[start])
        };
        let hi = if i + 1 >= grid.len() {
            grid[i]
        } else {
            refine(grid[i + 1], grid[i])
        };
        out.push(Interval::new(lo, hi));
        i += 1;
    }
    out
}

/// Lazily computed, shared intermediate results for one system and one
/// configuration.
pub struct Analysis {
    seq: MatrixSequence,
    cfg: SpectralConfig,
    table: Arc<Tabulated>,
    observed: (f64, f64),
    tri: Option<Arc<TriangularForm>>,
    diagonal: Option<Vec<BohlEstimate>>,
    fullspace: Option<BohlEstimate>,
    blocks: Option<Vec<(BohlEstimate, BohlEstimate)>>,
    samples: Option<Arc<Vec<DirectionSample>>>,
    user_directions: Option<Vec<Vec<f64>>>,
}

impl Analysis {
    pub fn new(seq: &MatrixSequence, cfg: &SpectralConfig) -> Result<Self> {
        cfg.validate()?;
        let table = Arc::new(seq.tabulate(cfg.window.n_max)?);
        let observed = table.observed_bounds();
        Ok(Self {
            seq: seq.clone(),
            cfg: cfg.clone(),
            table,
            observed,
            tri: None,
            diagonal: None,
            fullspace: None,
            blocks: None,
            samples: None,
            user_directions: None,
        })
    }

    /// Replaces the default direction sample.
    pub fn with_directions(mut self, directions: Vec<Vec<f64>>) -> Result<Self> {
        let d = self.dim();
        if directions.is_empty() {
            return Err(Error::Config("direction sample is empty".into()));
        }
        for x in &directions {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if x.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroVector);
            }
        }
        self.user_directions = Some(directions);
        self.samples = None;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.seq.dim()
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn sequence(&self) -> &MatrixSequence {
        &self.seq
    }

    pub fn table(&self) -> &Tabulated {
        &self.table
    }

    /// Observed `(sup ‖A‖, sup ‖A⁻¹‖)` over the horizon.
    pub fn observed_bounds(&self) -> (f64, f64) {
        self.observed
    }

    /// `[−ln sup‖A⁻¹‖, ln sup‖A‖]` padded by `grid_tol`.
    pub fn search_box(&self) -> Interval {
        let (nb, ib) = self.observed;
        Interval::new(-ib.ln(), nb.ln()).fattened(self.cfg.grid_tol)
    }

    pub fn triangular(&mut self) -> Result<Arc<TriangularForm>> {
        if self.tri.is_none() {
            let tri = qr_normal_form_table(self.table.clone(), DEFAULT_CHECKPOINT_STRIDE)?;
            self.tri = Some(Arc::new(tri));
        }
        Ok(self.tri.clone().expect("just set"))
    }

    /// Bohl estimates of the diagonal entries of the triangular form.
    pub fn diagonal_estimates(&mut self) -> Result<Vec<BohlEstimate>> {
        if self.diagonal.is_none() {
            let tri = self.triangular()?;
            let window = self.cfg.window.clone();
            let est = (0..tri.dim)
                .into_par_iter()
                .map(|k| bohl_exponents_fullspace(&tri.diagonal_table(k), &window))
                .collect::<Result<Vec<_>>>()?;
            self.diagonal = Some(est);
        }
        Ok(self.diagonal.clone().expect("just set"))
    }

    pub fn fullspace(&mut self) -> Result<BohlEstimate> {
        if self.fullspace.is_none() {
            self.fullspace = Some(bohl_exponents_fullspace(self.table.as_ref(), &self.cfg.window)?);
        }
        Ok(self.fullspace.clone().expect("just set"))
    }

    /// `(leading, trailing)` block exponents of the triangular form for
    /// splits `k = 1..d`.
    pub fn block_estimates(&mut self) -> Result<Vec<(BohlEstimate, BohlEstimate)>> {
        if self.blocks.is_none() {
            let tri = self.triangular()?;
            let window = self.cfg.window.clone();
            let est = (1..tri.dim)
                .map(|k| {
                    let lead = bohl_exponents_fullspace(&tri.block_table(k, true), &window)?;
                    let trail = bohl_exponents_fullspace(&tri.block_table(k, false), &window)?;
                    Ok((lead, trail))
                })
                .collect::<Result<Vec<_>>>()?;
            self.blocks = Some(est);
        }
        Ok(self.blocks.clone().expect("just set"))
    }

    fn default_directions(&self) -> Vec<(DirectionOrigin, Vec<f64>)> {
        let d = self.dim();
        let mut out: Vec<(DirectionOrigin, Vec<f64>)> = Vec::new();
        let push = |origin, v: Vec<f64>, out: &mut Vec<(DirectionOrigin, Vec<f64>)>| {
            if !out.iter().any(|(_, w)| same_line(w, &v)) {
                out.push((origin, v));
            }
        };
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            push(DirectionOrigin::Basis, e, &mut out);
        }
        // T(0) = I, so the frame columns at 0 coincide with the basis
        for v in sphere_lattice(d, self.cfg.sphere_samples_per_dim * d, self.cfg.seed) {
            push(DirectionOrigin::Sphere, v, &mut out);
        }
        out
    }

    /// Slow subspaces of dimension `1..d−1`, from seeded Gaussian start
    /// frames, propagated backward from twice the horizon when the sequence
    /// is defined that far.
    fn slow_subspaces(&self) -> Result<Vec<SlowSubspace>> {
        let d = self.dim();
        let n_max = self.cfg.window.n_max;
        let lookahead = if self.seq.ensure_horizon(2 * n_max).is_ok() {
            n_max
        } else {
            0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xbac4_3a2d);
        let starts: Vec<Matrix> = (1..d)
            .map(|k| Matrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        starts
            .par_iter()
            .map(|start| {
                if lookahead > 0 {
                    slow_subspace(&self.seq, start, n_max, lookahead)
                } else {
                    slow_subspace(self.table.as_ref(), start, n_max, 0)
                }
            })
            .collect()
    }

    /// Bohl estimates of the direction sample (cached).
    pub fn direction_samples(&mut self) -> Result<Arc<Vec<DirectionSample>>> {
        if self.samples.is_none() {
            let n_max = self.cfg.window.n_max;
            let window = &self.cfg.window;
            let table = self.table.as_ref();
            let forward: Vec<(DirectionOrigin, Vec<f64>)> = match &self.user_directions {
                Some(dirs) => dirs
                    .iter()
                    .map(|v| (DirectionOrigin::User, v.clone()))
                    .collect(),
                None => self.default_directions(),
            };
            let slow = if self.user_directions.is_some() {
                Vec::new()
            } else {
                self.slow_subspaces()?
            };
            let d = self.dim();
            let mut samples: Vec<DirectionSample> = forward
                .par_iter()
                .map(|(origin, x0)| {
                    let sol = propagate_direction(table, x0, n_max)?;
                    let estimate = bohl_exponents_direction(&sol, window)?;
                    Ok(DirectionSample {
                        origin: *origin,
                        level: d,
                        x0: sol.x0.clone(),
                        estimate,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let extra = self.cfg.slow_samples_per_subspace;
            let seed = self.cfg.seed;
            let slow_jobs: Vec<(&SlowSubspace, Vec<f64>)> = slow
                .iter()
                .flat_map(|sub| {
                    let k = sub.factors.dim;
                    let mut coords: Vec<Vec<f64>> = (0..k)
                        .map(|i| {
                            let mut e = vec![0.0; k];
                            e[i] = 1.0;
                            e
                        })
                        .collect();
                    if k > 1 {
                        coords.extend(sphere_lattice(k, extra, seed));
                    }
                    coords.into_iter().map(move |c| (sub, c))
                })
                .collect();
            let back: Vec<DirectionSample> = slow_jobs
                .par_iter()
                .map(|(sub, c)| {
                    let sol = propagate_direction(&sub.factors, c, n_max)?;
                    let estimate = bohl_exponents_direction(&sol, window)?;
                    let x0 = sub.embed(&sol.x0);
                    Ok(DirectionSample {
                        origin: DirectionOrigin::SlowSubspace,
                        level: sub.factors.dim,
                        x0,
                        estimate,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            samples.extend(back);
            self.samples = Some(Arc::new(samples));
        }
        Ok(self.samples.clone().expect("just set"))
    }

    fn diagnostics(&self, route: &str, samples: usize) -> MethodDiagnostics {
        MethodDiagnostics {
            route: route.to_string(),
            horizon: self.cfg.window.n_max,
            n_last: self.cfg.window.n_last(),
            thresholds: self.cfg.window.thresholds.clone(),
            representation: self.cfg.window.representation,
            direction_samples: samples,
            grid_tol: self.cfg.grid_tol,
            alpha_min: self.cfg.alpha_min,
            inner_approximation: false,
            interval_count_ok: true,
            filtration_consistent: true,
            cross_check: None,
            endpoint_check: None,
            notes: Vec::new(),
        }
    }

    // ---------------------------------------------------------------- Σ_ED

    /// Margin of the diagonal count split at γ: every diagonal entry must be
    /// uniformly decaying or growing relative to γ.
    fn diagonal_margin(diag: &[(f64, f64)], gamma: f64) -> (f64, usize) {
        let mut margin = f64::INFINITY;
        let mut stable = 0;
        for &(lo, hi) in diag {
            let m = (gamma - hi).max(lo - gamma);
            margin = margin.min(m);
            if gamma - hi >= lo - gamma {
                stable += 1;
            }
        }
        (margin, stable)
    }

    /// Best split margin at γ from block exponents of the triangular form.
    fn block_margin(
        full: (f64, f64),
        blocks: &[((f64, f64), (f64, f64))],
        gamma: f64,
    ) -> f64 {
        let mut best = (full.0 - gamma).max(gamma - full.1);
        for &((l_lo, l_hi), (t_lo, t_hi)) in blocks {
            let lead_decays = (gamma - l_hi).min(t_lo - gamma);
            let lead_grows = (l_lo - gamma).min(gamma - t_hi);
            best = best.max(lead_decays).max(lead_grows);
        }
        best
    }

    pub fn ed_spectrum(&mut self) -> Result<SpectrumResult> {
        let d = self.dim();
        let diag = self.diagonal_estimates()?;
        let mut result = diagonal_result(&diag, self.search_box(), &self.cfg);
        result.method = MethodDiagnostics {
            route: "qr_diagonal".into(),
            ..self.diagnostics("qr_diagonal", 0)
        };
        result.method.interval_count_ok =
            !result.intervals.is_empty() && result.intervals.len() <= d;

        let full = self.fullspace()?;
        let tol = self.cfg.relation_tol();
        let min_gap = (result.min() - full.lower).abs();
        let max_gap = (result.max() - full.upper).abs();
        result.method.endpoint_check = Some(EndpointCheck {
            fullspace_lower: full.lower,
            fullspace_upper: full.upper,
            min_gap,
            max_gap,
            tolerance: tol,
            agrees: min_gap <= tol && max_gap <= tol,
        });

        if d >= 2 && d <= self.cfg.cross_check_max_dim {
            let blocks: Vec<((f64, f64), (f64, f64))> = self
                .block_estimates()?
                .iter()
                .map(|(l, t)| ((l.lower, l.upper), (t.lower, t.upper)))
                .collect();
            let fl = (full.lower, full.upper);
            let alpha = self.cfg.alpha_min;
            let grid = grid_spectrum(
                self.search_box(),
                self.cfg.grid_tol,
                self.cfg.bisection_iters,
                |g| Self::block_margin(fl, &blocks, g) < alpha,
            );
            let grid = merge_intervals(&grid, self.cfg.grid_tol);
            let h = hausdorff(&result.intervals, &grid);
            if h > tol {
                result.method.notes.push(format!(
                    "block-exponent γ-grid disagrees with the diagonal route (Hausdorff {h:.4})"
                ));
            }
            result.method.cross_check = Some(CrossCheck {
                route: "block_exponent_grid".into(),
                intervals: grid,
                hausdorff: h,
                tolerance: tol,
                agrees: h <= tol,
            });
        }
        let filt = self.filtration(&result)?;
        if filt.dims != result.filtration_dims {
            result.method.notes.push(format!(
                "S_γ dimension scan gives {:?}, interval count gives {:?}",
                filt.dims, result.filtration_dims
            ));
        }
        result.method.filtration_consistent =
            filt.consistent && is_strict_filtration(&result.filtration_dims, d);
        Ok(result)
    }

    // ----------------------------------------------------------------- Σ_B

    pub fn bohl_spectrum(&mut self) -> Result<SpectrumResult> {
        let samples = self.direction_samples()?;
        let raw: Vec<Interval> = samples.iter().map(DirectionSample::interval).collect();
        let intervals = merge_intervals(&raw, self.cfg.grid_tol);
        let mut result = SpectrumResult {
            kind: SpectrumKind::Bohl,
            intervals,
            filtration_dims: Vec::new(),
            search_box: self.search_box(),
            method: self.diagnostics("direction_sample", samples.len()),
        };
        result.method.inner_approximation = true;
        result.method.interval_count_ok =
            !result.intervals.is_empty() && result.intervals.len() <= self.dim();
        let filt = self.filtration(&result)?;
        result.filtration_dims = filt.dims;
        result.method.filtration_consistent = filt.consistent;
        Ok(result)
    }

    // ---------------------------------------------------------------- Σ_BD

    fn bd_margin(samples: &[DirectionSample], gamma: f64, previous: bool) -> f64 {
        samples
            .iter()
            .map(|s| {
                let (lo, hi) = if previous {
                    s.estimate.previous()
                } else {
                    (s.estimate.lower, s.estimate.upper)
                };
                (gamma - hi).max(lo - gamma)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn verdict_from(margin: f64, previous: f64, alpha_min: f64) -> Verdict {
        match (margin >= alpha_min, previous >= alpha_min) {
            (true, true) => Verdict::Resolvent,
            (false, false) => Verdict::Spectrum,
            _ => Verdict::Undecided,
        }
    }

    pub fn bd_spectrum(&mut self) -> Result<SpectrumResult> {
        let mut result = self.bohl_spectrum()?;
        result.kind = SpectrumKind::BohlDichotomy;
        result.method.route = "closure_of_sampled_bohl".into();
        let samples = self.direction_samples()?;
        let alpha = self.cfg.alpha_min;
        let grid = grid_spectrum(
            self.search_box(),
            self.cfg.grid_tol,
            self.cfg.bisection_iters,
            |g| {
                let v = Self::verdict_from(
                    Self::bd_margin(&samples, g, false),
                    Self::bd_margin(&samples, g, true),
                    alpha,
                );
                v != Verdict::Resolvent
            },
        );
        let grid = merge_intervals(&grid, self.cfg.grid_tol);
        let tol = self.cfg.relation_tol();
        let h = hausdorff(&result.intervals, &grid);
        result.method.cross_check = Some(CrossCheck {
            route: "bd_gamma_grid".into(),
            intervals: grid,
            hausdorff: h,
            tolerance: tol,
            agrees: h <= tol,
        });
        Ok(result)
    }

    // ------------------------------------------------------- γ verdicts

    pub fn classify_gamma(&mut self, gamma: f64, mode: DichotomyMode) -> Result<GammaVerdict> {
        let d = self.dim();
        let alpha = self.cfg.alpha_min;
        match mode {
            DichotomyMode::Bd => {
                let samples = self.direction_samples()?;
                let margin = Self::bd_margin(&samples, gamma, false);
                let previous = Self::bd_margin(&samples, gamma, true);
                let verdict = Self::verdict_from(margin, previous, alpha);
                let decaying: Vec<&[f64]> = samples
                    .iter()
                    .filter(|s| s.estimate.upper - gamma <= -alpha)
                    .map(|s| s.x0.as_slice())
                    .collect();
                let l1 = rank(&decaying, d);
                let mut ranked: Vec<&DirectionSample> = samples.iter().collect();
                ranked.sort_by(|a, b| {
                    let ma = (gamma - a.estimate.upper).max(a.estimate.lower - gamma);
                    let mb = (gamma - b.estimate.upper).max(b.estimate.lower - gamma);
                    ma.total_cmp(&mb)
                });
                let witnesses = ranked
                    .iter()
                    .take(4)
                    .filter(|s| verdict == Verdict::Resolvent || {
                        (gamma - s.estimate.upper).max(s.estimate.lower - gamma) < alpha
                    })
                    .map(|s| self.witness(s, gamma, alpha))
                    .collect::<Result<Vec<_>>>()?;
                Ok(GammaVerdict {
                    gamma,
                    mode,
                    verdict,
                    margin,
                    alpha_min: alpha,
                    split_dims: (l1, d - l1),
                    witnesses,
                })
            }
            DichotomyMode::Ed => {
                let diag = self.diagonal_estimates()?;
                let now: Vec<(f64, f64)> = diag.iter().map(|e| (e.lower, e.upper)).collect();
                let prev: Vec<(f64, f64)> = diag.iter().map(BohlEstimate::previous).collect();
                let (margin, stable) = Self::diagonal_margin(&now, gamma);
                let (previous, _) = Self::diagonal_margin(&prev, gamma);
                let verdict = Self::verdict_from(margin, previous, alpha);
                let witnesses = diag
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| (gamma - e.upper).max(e.lower - gamma) < alpha)
                    .map(|(k, e)| {
                        let mut x0 = vec![0.0; d];
                        x0[k] = 1.0;
                        Witness {
                            x0,
                            lower: e.lower,
                            upper: e.upper,
                            fitted_log_c: None,
                        }
                    })
                    .collect();
                Ok(GammaVerdict {
                    gamma,
                    mode,
                    verdict,
                    margin,
                    alpha_min: alpha,
                    split_dims: (stable, d - stable),
                    witnesses,
                })
            }
        }
    }

    /// Witness with fitted `ln C`: for a decaying solution the constant of
    /// `‖x(n)‖ ≤ C e^{(γ−α)(n−m)} ‖x(m)‖`, for a growing one of
    /// `‖x(n)‖ ≥ C e^{(γ+α)(n−m)} ‖x(m)‖`.
    fn witness(&self, s: &DirectionSample, gamma: f64, alpha: f64) -> Result<Witness> {
        let n_max = self.cfg.window.n_max;
        let sol = propagate_direction(self.table.as_ref(), &s.x0, n_max)?;
        let decaying = gamma - s.estimate.upper >= s.estimate.lower - gamma;
        let fitted = if decaying {
            fitted_growth_constant(&sol, gamma - alpha, true)
        } else {
            fitted_growth_constant(&sol, gamma + alpha, false)
        };
        Ok(Witness {
            x0: s.x0.clone(),
            lower: s.estimate.lower,
            upper: s.estimate.upper,
            fitted_log_c: Some(fitted),
        })
    }

    /// Verdicts on the γ-grid over the search box.
    pub fn verdict_trace(&mut self, mode: DichotomyMode) -> Result<Vec<GammaVerdict>> {
        let bx = self.search_box();
        let step = self.cfg.grid_tol;
        let count = ((bx.width() / step).ceil() as usize).max(1);
        (0..=count)
            .map(|i| {
                let g = (bx.lo + step * i as f64).min(bx.hi);
                let mut v = self.classify_gamma(g, mode)?;
                v.witnesses.clear();
                Ok(v)
            })
            .collect()
    }

    // ------------------------------------------------- subspaces, filtration

    pub fn subspace_dims(&mut self, gamma: f64) -> Result<SubspaceDims> {
        let d = self.dim();
        let alpha = self.cfg.alpha_min;
        let diag = self.diagonal_estimates()?;
        let basis_witness: Vec<usize> = diag
            .iter()
            .enumerate()
            .filter(|(_, e)| e.upper < gamma - alpha)
            .map(|(k, _)| k)
            .collect();
        let near_diag = diag
            .iter()
            .any(|e| Interval::new(e.lower, e.upper).distance_to(gamma) < alpha);
        let samples = self.direction_samples()?;
        let in_m: Vec<&[f64]> = samples
            .iter()
            .filter(|s| s.estimate.upper < gamma - alpha)
            .map(|s| s.x0.as_slice())
            .collect();
        let near_sample = samples
            .iter()
            .any(|s| s.interval().distance_to(gamma) < alpha);
        Ok(SubspaceDims {
            gamma,
            dim_s: basis_witness.len(),
            dim_m: rank(&in_m, d),
            basis_witness,
            heuristic: near_diag || near_sample,
        })
    }

    /// Dimensions of the filtration from `dim S_γ` (for `Σ_ED`) or `dim M_γ`
    /// (for `Σ_B`, `Σ_BD`) at a point below the search box, at every gap
    /// midpoint, and above the search box.
    pub fn filtration(&mut self, spec: &SpectrumResult) -> Result<FiltrationReport> {
        if spec.intervals.is_empty() {
            return Err(Error::Config("spectrum has no intervals".into()));
        }
        let d = self.dim();
        let mut probes = vec![spec.search_box.lo.min(spec.min()) - 1.0];
        for w in spec.intervals.windows(2) {
            probes.push(0.5 * (w[0].hi + w[1].lo));
        }
        probes.push(spec.search_box.hi.max(spec.max()) + 1.0);
        let mut dims = Vec::with_capacity(probes.len());
        for g in probes {
            let sd = self.subspace_dims(g)?;
            dims.push(match spec.kind {
                SpectrumKind::ExponentialDichotomy => sd.dim_s,
                _ => sd.dim_m,
            });
        }
        let consistent = is_strict_filtration(&dims, d);
        Ok(FiltrationReport { dims, consistent })
    }
}

fn is_strict_filtration(dims: &[usize], d: usize) -> bool {
    dims.first() == Some(&0)
        && dims.last() == Some(&d)
        && dims.windows(2).all(|w| w[0] < w[1])
}

fn diagonal_result(diag: &[BohlEstimate], search_box: Interval, cfg: &SpectralConfig) -> SpectrumResult {
    let raw: Vec<Interval> = diag.iter().map(|e| Interval::new(e.lower, e.upper)).collect();
    let intervals = merge_intervals(&raw, cfg.grid_tol);
    let mut dims = vec![0];
    let mut count = 0;
    for iv in &intervals {
        count += raw.iter().filter(|r| r.lo >= iv.lo && r.hi <= iv.hi).count();
        dims.push(count);
    }
    SpectrumResult {
        kind: SpectrumKind::ExponentialDichotomy,
        intervals,
        filtration_dims: dims,
        search_box,
        method: MethodDiagnostics {
            route: "diagonal_union".into(),
            horizon: cfg.window.n_max,
            n_last: cfg.window.n_last(),
            thresholds: cfg.window.thresholds.clone(),
            representation: cfg.window.representation,
            direction_samples: 0,
            grid_tol: cfg.grid_tol,
            alpha_min: cfg.alpha_min,
            inner_approximation: false,
            interval_count_ok: !raw.is_empty(),
            filtration_consistent: true,
            cross_check: None,
            endpoint_check: None,
            notes: Vec::new(),
        },
    }
}

/// `Σ_ED` of a scalar sequence: `[β̲(ℝ), β̄(ℝ)]`.
pub fn scalar_ed_spectrum(a: &MatrixSequence, cfg: &WindowConfig) -> Result<Interval> {
    if a.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: a.dim(),
        });
    }
    let table = a.tabulate(cfg.n_max)?;
    let est = bohl_exponents_fullspace(&table, cfg)?;
    Ok(Interval::new(est.lower, est.upper))
}

/// `Σ_ED` of a diagonal system as the merged union of its scalar spectra.
pub fn diagonal_spectrum(diag_seqs: &[MatrixSequence], cfg: &SpectralConfig) -> Result<SpectrumResult> {
    cfg.validate()?;
    if diag_seqs.is_empty() {
        return Err(Error::Config("no diagonal entries".into()));
    }
    if let Some(bad) = diag_seqs.iter().find(|s| s.dim() != 1) {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: bad.dim(),
        });
    }
    let tables = diag_seqs
        .iter()
        .map(|s| s.tabulate(cfg.window.n_max))
        .collect::<Result<Vec<_>>>()?;
    let est = tables
        .par_iter()
        .map(|t| bohl_exponents_fullspace(t, &cfg.window))
        .collect::<Result<Vec<_>>>()?;
    let (mut nb, mut ib) = (0.0_f64, 0.0_f64);
    for t in &tables {
        let (a, b) = t.observed_bounds();
        nb = nb.max(a);
        ib = ib.max(b);
    }
    let bx = Interval::new(-ib.ln(), nb.ln()).fattened(cfg.grid_tol);
    let mut result = diagonal_result(&est, bx, cfg);
    result.method.interval_count_ok =
        !result.intervals.is_empty() && result.intervals.len() <= diag_seqs.len();
    result.method.filtration_consistent =
        is_strict_filtration(&result.filtration_dims, diag_seqs.len());
    Ok(result)
}

pub fn ed_spectrum(seq: &MatrixSequence, cfg: &SpectralConfig) -> Result<SpectrumResult> {
    Analysis::new(seq, cfg)?.ed_spectrum()
}

/// `Σ_B` over the given directions, or over the default sample when
/// `directions` is `None`.
pub fn bohl_spectrum_sampled(
    seq: &MatrixSequence,
    directions: Option<&[Vec<f64>]>,
    cfg: &SpectralConfig,
) -> Result<SpectrumResult> {
    let mut analysis = Analysis::new(seq, cfg)?;
    if let Some(dirs) = directions {
        analysis = analysis.with_directions(dirs.to_vec())?;
    }
    analysis.bohl_spectrum()
}

pub fn bd_spectrum(seq: &MatrixSequence, cfg: &SpectralConfig) -> Result<SpectrumResult> {
    Analysis::new(seq, cfg)?.bd_spectrum()
}

pub fn classify_gamma(
    seq: &MatrixSequence,
    gamma: f64,
    mode: DichotomyMode,
    cfg: &SpectralConfig,
) -> Result<GammaVerdict> {
    Analysis::new(seq, cfg)?.classify_gamma(gamma, mode)
}

pub fn subspace_dims(seq: &MatrixSequence, gamma: f64, cfg: &SpectralConfig) -> Result<SubspaceDims> {
    Analysis::new(seq, cfg)?.subspace_dims(gamma)
}

pub fn filtration(
    seq: &MatrixSequence,
    spec: &SpectrumResult,
    cfg: &SpectralConfig,
) -> Result<FiltrationReport> {
    Analysis::new(seq, cfg)?.filtration(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{load_system, ScalarPattern, SystemSpec};

    fn ln2() -> f64 {
        2f64.ln()
    }

    fn cfg(n: usize) -> SpectralConfig {
        SpectralConfig::for_horizon(n)
    }

    fn diag_half(n: usize) -> MatrixSequence {
        load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            n,
        ))
        .unwrap()
    }

    #[test]
    fn grid_refinement_locates_edges() {
        let bx = Interval::new(-1.0, 1.0);
        let found = grid_spectrum(bx, 0.1, 30, |g| (0.123..=0.456).contains(&g));
        assert_eq!(found.len(), 1);
        assert!((found[0].lo - 0.123).abs() < 1e-6);
        assert!((found[0].hi - 0.456).abs() < 1e-6);
    }

    #[test]
    fn sphere_lattice_is_unit_and_distinct() {
        for d in 1..=4 {
            let pts = sphere_lattice(d, 64 * d, 3);
            for p in &pts {
                let n: f64 = p.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        let pts = sphere_lattice(3, 192, 0);
        for i in 0..pts.len() {
            for j in 0..i {
                assert!(!same_line(&pts[i], &pts[j]));
            }
        }
    }

    #[test]
    fn scalar_examples() {
        let c = load_system(&SystemSpec::constant(1, &[2.0], 2000)).unwrap();
        let i = scalar_ed_spectrum(&c, &WindowConfig::for_horizon(2000)).unwrap();
        assert!((i.lo - ln2()).abs() < 1e-12 && (i.hi - ln2()).abs() < 1e-12);
        assert!(scalar_ed_spectrum(&diag_half(10), &WindowConfig::for_horizon(10)).is_err());
    }

    #[test]
    fn diagonal_spectrum_examples() {
        let c = cfg(4000);
        let two = load_system(&SystemSpec::constant(1, &[2.0], 4000)).unwrap();
        let half = load_system(&SystemSpec::constant(1, &[0.5], 4000)).unwrap();
        let r = diagonal_spectrum(&[two.clone(), half], &c).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert!((r.intervals[0].lo + ln2()).abs() < 1e-12);
        assert!((r.intervals[1].hi - ln2()).abs() < 1e-12);
        assert_eq!(r.filtration_dims, vec![0, 1, 2]);

        let r = diagonal_spectrum(&[two.clone(), two], &c).unwrap();
        assert_eq!(r.intervals.len(), 1);
        assert_eq!(r.filtration_dims, vec![0, 2]);

        assert!(diagonal_spectrum(&[diag_half(10)], &c).is_err());
    }

    #[test]
    fn ed_spectrum_of_diagonal_system() {
        let r = ed_spectrum(&diag_half(8000), &cfg(8000)).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert!((r.intervals[0].lo + ln2()).abs() < 1e-2);
        assert!((r.intervals[1].hi - ln2()).abs() < 1e-2);
        assert_eq!(r.filtration_dims, vec![0, 1, 2]);
        assert!(r.method.endpoint_check.as_ref().unwrap().agrees);
        assert!(r.method.cross_check.as_ref().unwrap().agrees, "{:?}", r.method);
        assert!(r.method.filtration_consistent);
    }

    #[test]
    fn classify_examples() {
        let seq = diag_half(4000);
        let c = cfg(4000);
        let v = classify_gamma(&seq, 0.0, DichotomyMode::Bd, &c).unwrap();
        assert_eq!(v.verdict, Verdict::Resolvent);
        assert!((v.margin - ln2()).abs() < 1e-2);
        assert_eq!(v.split_dims, (1, 1));

        let v = classify_gamma(&seq, ln2(), DichotomyMode::Bd, &c).unwrap();
        assert_eq!(v.verdict, Verdict::Spectrum);
        assert!(!v.witnesses.is_empty());

        let a = load_system(&SystemSpec::constant(1, &[2.0], 4000)).unwrap();
        let v = classify_gamma(&a, 0.5, DichotomyMode::Ed, &c).unwrap();
        assert_eq!(v.verdict, Verdict::Resolvent);
        assert!((v.margin - (ln2() - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn subspace_dim_examples() {
        let seq = diag_half(4000);
        let c = cfg(4000);
        let mut an = Analysis::new(&seq, &c).unwrap();
        let s0 = an.subspace_dims(0.0).unwrap();
        assert_eq!((s0.dim_s, s0.dim_m), (1, 1));
        assert!(!s0.heuristic);
        assert_eq!(an.subspace_dims(1.0).unwrap().dim_s, 2);
        assert_eq!(an.subspace_dims(-1.0).unwrap().dim_s, 0);
    }

    #[test]
    fn bohl_sample_for_diagonal_system() {
        let seq = diag_half(4000);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let r = bohl_spectrum_sampled(&seq, Some(&dirs), &cfg(4000)).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert!((r.intervals[0].hi + ln2()).abs() < 1e-2);
        assert!((r.intervals[1].lo - ln2()).abs() < 1e-2);
        assert!(r.method.inner_approximation);
        assert!(bohl_spectrum_sampled(&seq, Some(&[vec![0.0, 0.0]]), &cfg(4000)).is_err());
    }

    #[test]
    fn triangular_constant_filtration() {
        let seq = load_system(&SystemSpec::upper_triangular(2, &[vec![2.0, 1.0, 0.0, 0.5]], 8000)).unwrap();
        let r = ed_spectrum(&seq, &cfg(8000)).unwrap();
        assert_eq!(r.filtration_dims, vec![0, 1, 2]);
        let f = filtration(&seq, &r, &cfg(8000)).unwrap();
        assert_eq!(f.dims, vec![0, 1, 2]);
        let bd = bd_spectrum(&seq, &cfg(8000)).unwrap();
        assert_eq!(bd.intervals.len(), 2, "{:?}", bd.intervals);
        assert_eq!(bd.filtration_dims, vec![0, 1, 2]);
    }
}
