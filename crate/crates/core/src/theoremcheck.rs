//! Property suites relating exponents and spectra on a roster of systems.
//!
//! Every check produces a [`CheckEntry`] carrying the measured quantities,
//! so a report can be audited without rerunning it. Computation errors are
//! recorded as failures; a suite never aborts early.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Result;
use crate::exponents::{
    accumulation_interval_check, bohl_exponents_direction, bohl_exponents_direction_both,
    bohl_exponents_fullspace_both, bohl_exponents_subspace,
    fitted_growth_constant, BohlEstimate,
};
use crate::linalg::{qr_positive, rotation, Matrix};
use crate::propagation::{propagate_backward, propagate_direction, LogSolution, WindowConfig};
use crate::spectra::{
    contained_in_fattened, diagonal_spectrum, directed_hausdorff, hausdorff, Analysis, Interval,
    SpectralConfig, SpectrumResult,
};
use crate::systems::{
    diagonal_entry, diagonal_of, load_system, shift, transform, MatrixSequence, ScalarPattern,
    SystemSpec, Tabulated, TransformSequence,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub system_id: String,
    pub status: CheckStatus,
    pub measured: BTreeMap<String, Value>,
    pub tolerance: f64,
    pub witness: Option<Value>,
    pub note: Option<String>,
}

impl CheckEntry {
    fn new(name: &str, system_id: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            system_id: system_id.to_string(),
            status: CheckStatus::Pass,
            measured: BTreeMap::new(),
            tolerance,
            witness: None,
            note: None,
        }
    }

    fn measure(mut self, key: &str, value: impl Serialize) -> Self {
        self.measured
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    fn verdict(mut self, ok: bool) -> Self {
        self.status = if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        self
    }

    fn witness(mut self, w: Value) -> Self {
        self.witness = Some(w);
        self
    }

    fn skip(mut self, why: impl Into<String>) -> Self {
        self.status = CheckStatus::Skipped;
        self.note = Some(why.into());
        self
    }

    fn error(name: &str, system_id: &str, err: &crate::Error) -> Self {
        let mut e = Self::new(name, system_id, 0.0).verdict(false);
        e.note = Some(format!("computation failed: {err}"));
        e.witness = Some(json!({ "error": err.to_string() }));
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub pass: usize,
    pub fail: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checks: Vec<CheckEntry>,
}

impl CheckReport {
    fn from_entries(mut checks: Vec<CheckEntry>) -> Self {
        checks.sort_by(|a, b| (&a.name, &a.system_id).cmp(&(&b.name, &b.system_id)));
        Self { checks }
    }

    pub fn merge(reports: Vec<CheckReport>) -> Self {
        Self::from_entries(reports.into_iter().flat_map(|r| r.checks).collect())
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .collect()
    }

    pub fn summary(&self) -> CheckSummary {
        let count = |s| self.checks.iter().filter(|c| c.status == s).count();
        CheckSummary {
            pass: count(CheckStatus::Pass),
            fail: count(CheckStatus::Fail),
            skipped: count(CheckStatus::Skipped),
        }
    }

    pub fn to_json(&self) -> String {
        let value = json!({ "summary": self.summary(), "checks": self.checks });
        serde_json::to_string_pretty(&value).expect("report serializes")
    }
}

/// A system and the horizon it is checked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: String,
    pub spec: SystemSpec,
    pub horizon: usize,
}

impl RosterEntry {
    pub fn new(name: &str, spec: SystemSpec, horizon: usize) -> Self {
        Self {
            id: format!("{name}@{horizon}"),
            spec,
            horizon,
        }
    }

    pub fn load(&self) -> Result<MatrixSequence> {
        load_system(&self.spec)
    }
}

fn rotation_scale_entries() -> Vec<f64> {
    let r = rotation(1.0) * 1.5;
    vec![r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]]
}

/// The seven builtin generators at one horizon.
pub fn builtin_systems(horizon: usize) -> Vec<RosterEntry> {
    vec![
        RosterEntry::new("constant_2", SystemSpec::constant(1, &[2.0], horizon), horizon),
        RosterEntry::new(
            "periodic_1_4",
            SystemSpec::periodic(1, &[vec![1.0], vec![4.0]], horizon),
            horizon,
        ),
        RosterEntry::new(
            "diag_2_half",
            SystemSpec::diagonal(
                vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
                horizon,
            ),
            horizon,
        ),
        RosterEntry::new(
            "triangular_2_1_half",
            SystemSpec::upper_triangular(2, &[vec![2.0, 1.0, 0.0, 0.5]], horizon),
            horizon,
        ),
        RosterEntry::new("dyadic", SystemSpec::dyadic(horizon), horizon),
        RosterEntry::new(
            "random_qdq_3_seed7",
            SystemSpec::random_qdq(3, 7, 0.5, 2.0, horizon),
            horizon,
        ),
        RosterEntry::new(
            "rotation_scale_1.5",
            SystemSpec::constant(2, &rotation_scale_entries(), horizon),
            horizon,
        ),
    ]
}

pub fn builtin_roster(horizons: &[usize]) -> Vec<RosterEntry> {
    horizons.iter().flat_map(|&h| builtin_systems(h)).collect()
}

/// Upper triangular systems for the triangular relations.
pub fn triangular_roster(horizon: usize) -> Vec<RosterEntry> {
    vec![
        RosterEntry::new(
            "triangular_2_1_half",
            SystemSpec::upper_triangular(2, &[vec![2.0, 1.0, 0.0, 0.5]], horizon),
            horizon,
        ),
        RosterEntry::new(
            "periodic_triangular_1_4__3_3",
            SystemSpec::upper_triangular(
                2,
                &[vec![1.0, 1.0, 0.0, 3.0], vec![4.0, -2.0, 0.0, 3.0]],
                horizon,
            ),
            horizon,
        ),
        RosterEntry::new(
            "diag_2_half",
            SystemSpec::diagonal(
                vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
                horizon,
            ),
            horizon,
        ),
    ]
}

/// A system paired with a Lyapunov transformation.
#[derive(Debug, Clone)]
pub struct InvarianceCase {
    pub id: String,
    pub system: RosterEntry,
    pub transform: TransformSequence,
}

/// Five seeded (system, T) pairs with `sup‖T‖ · sup‖T⁻¹‖ ≤ 4`.
pub fn builtin_invariance_cases(horizon: usize, seed: u64) -> Result<Vec<InvarianceCase>> {
    let roster = builtin_systems(horizon);
    let pick = |name: &str| {
        roster
            .iter()
            .find(|r| r.id.starts_with(name))
            .cloned()
            .expect("builtin system")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |d: usize| Matrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let theta: f64 = 0.7 + 0.1 * gaussian(1)[(0, 0)].tanh();

    // Q·diag(s)·Q' with singular values in [1, 2]
    let (q1, _) = qr_positive(&gaussian(3));
    let (q2, _) = qr_positive(&gaussian(3));
    let s = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.5, 2.0]));
    let t_qdq = &q1 * s * q2.transpose();

    let phase: f64 = gaussian(1)[(0, 0)];
    let horizon_hint = 2 * horizon + 2;
    Ok(vec![
        InvarianceCase {
            id: "identity".into(),
            system: pick("diag_2_half"),
            transform: TransformSequence::identity(2),
        },
        InvarianceCase {
            id: "constant_rotation".into(),
            system: pick("triangular_2_1_half"),
            transform: TransformSequence::constant(&rotation(theta))?,
        },
        InvarianceCase {
            id: "oscillating_diag".into(),
            system: pick("diag_2_half"),
            transform: TransformSequence::from_fn(2, horizon_hint, |n| {
                Matrix::from_row_slice(2, 2, &[1.0 + 0.5 * (n as f64).sin(), 0.0, 0.0, 1.0])
            })?,
        },
        InvarianceCase {
            id: "seeded_constant".into(),
            system: pick("random_qdq_3_seed7"),
            transform: TransformSequence::constant(&t_qdq)?,
        },
        InvarianceCase {
            id: "oscillating_scalar".into(),
            system: pick("dyadic"),
            transform: TransformSequence::from_fn(1, horizon_hint, move |n| {
                Matrix::from_element(1, 1, 1.5 + 0.5 * (0.3 * n as f64 + phase).sin())
            })?,
        },
    ])
}

/// Resolution and sampling settings shared by all suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub grid_tol: f64,
    pub alpha_min: f64,
    /// Overrides `N_last = horizon / 8`.
    pub n_last: Option<usize>,
    pub sphere_samples_per_dim: usize,
    pub seed: u64,
    pub probe_count: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            grid_tol: 1e-2,
            alpha_min: 1e-2,
            n_last: None,
            sphere_samples_per_dim: 64,
            seed: 0,
            probe_count: 5,
        }
    }
}

impl CheckConfig {
    pub fn window(&self, horizon: usize) -> WindowConfig {
        match self.n_last {
            Some(n) => WindowConfig::with_n_last(horizon, n),
            None => WindowConfig::for_horizon(horizon),
        }
    }

    pub fn spectral(&self, horizon: usize) -> SpectralConfig {
        let mut cfg = SpectralConfig::from_window(self.window(horizon));
        cfg.grid_tol = self.grid_tol;
        cfg.alpha_min = self.alpha_min;
        cfg.sphere_samples_per_dim = self.sphere_samples_per_dim;
        cfg.seed = self.seed;
        cfg
    }

    fn relation_tol(&self) -> f64 {
        2.0 * self.grid_tol
    }
}

fn seeded_direction(d: usize, seed: u64, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Solution through the slowest-growing direction, obtained by backward
/// propagation from beyond the horizon when the sequence allows it.
fn slow_solution(seq: &MatrixSequence, table: &Tabulated, n_max: usize, seed: u64) -> Result<LogSolution> {
    let terminal = seeded_direction(seq.dim(), seed, 17);
    if seq.ensure_horizon(2 * n_max).is_ok() {
        Ok(propagate_backward(seq, &terminal, 2 * n_max)?.truncated(n_max))
    } else {
        propagate_backward(table, &terminal, n_max)
    }
}

fn interval_json(e: &BohlEstimate) -> Value {
    json!([e.lower, e.upper])
}

fn intervals_json(iv: &[Interval]) -> Value {
    serde_json::to_value(iv).unwrap_or(Value::Null)
}

fn log_ratio_shift(sol: &LogSolution, gamma: f64) -> LogSolution {
    let mut out = sol.clone();
    for (n, l) in out.logn.iter_mut().enumerate() {
        *l -= gamma * n as f64;
    }
    out
}

// ------------------------------------------------------------ exponents

/// Properties of Bohl exponents: bounds, monotonicity over nested
/// subspaces, growth constants, scaling, sums, perturbations, equivalence
/// of the window families, accumulation points, shift identity and
/// threshold monotonicity.
pub fn run_exponent_properties(roster: &[RosterEntry], cfg: &CheckConfig) -> CheckReport {
    let entries: Vec<CheckEntry> = roster
        .par_iter()
        .flat_map_iter(|r| match exponent_checks(r, cfg) {
            Ok(v) => v,
            Err(e) => vec![CheckEntry::error("exponents", &r.id, &e)],
        })
        .collect();
    CheckReport::from_entries(entries)
}

fn exponent_checks(r: &RosterEntry, cfg: &CheckConfig) -> Result<Vec<CheckEntry>> {
    let id = r.id.as_str();
    let seq = r.load()?;
    let d = seq.dim();
    let window = cfg.window(r.horizon);
    window.validate()?;
    let n_max = window.n_max;
    let n_last = window.n_last() as f64;
    let table = seq.tabulate(n_max)?;
    let tol = cfg.grid_tol;
    let mut out = Vec::new();

    let x0 = seeded_direction(d, cfg.seed, 1);
    let sol0 = propagate_direction(&table, &x0, n_max)?;
    let (e0, e0_beyond) = bohl_exponents_direction_both(&sol0, &window)?;
    let sol1 = slow_solution(&seq, &table, n_max, cfg.seed)?;
    let e1 = bohl_exponents_direction(&sol1, &window)?;
    let (full, full_beyond) = bohl_exponents_fullspace_both(&table, &window)?;

    // (i) bounds by the Lyapunov constants
    {
        let lo = -seq.inv_norm_bound.ln();
        let hi = seq.norm_bound.ln();
        let slack = 1e-9;
        let mut worst = f64::NEG_INFINITY;
        for e in [&e0, &e1, &full] {
            worst = worst.max(lo - e.lower).max(e.lower - e.upper).max(e.upper - hi);
        }
        out.push(
            CheckEntry::new("exponents.bounds", id, slack)
                .measure("bound_interval", [lo, hi])
                .measure("generic", interval_json(&e0))
                .measure("slow", interval_json(&e1))
                .measure("fullspace", interval_json(&full))
                .measure("worst_violation", worst)
                .verdict(worst <= slack),
        );
    }

    // (ii) monotonicity along span(x₀) ⊂ L₂ ⊂ ℝ^d
    {
        let mut entry = CheckEntry::new("exponents.monotone_subspaces", id, tol)
            .measure("line", interval_json(&e0))
            .measure("fullspace", interval_json(&full));
        let mut excess = (e0.upper - full.upper).max(full.lower - e0.lower);
        if d >= 3 {
            let x2 = seeded_direction(d, cfg.seed, 2);
            let b = bohl_exponents_subspace(&table, &[x0.clone(), x2], &window, 8, cfg.seed)?;
            entry = entry
                .measure("plane_frame", interval_json(&b.frame))
                .measure("plane_inner", [b.inner.0, b.inner.1]);
            excess = excess
                .max(e0.upper - b.frame.upper)
                .max(b.frame.lower - e0.lower)
                .max(b.frame.upper - full.upper)
                .max(full.lower - b.frame.lower);
        }
        out.push(entry.measure("worst_violation", excess).verdict(excess <= tol));
    }

    // (iii) growth estimates with fitted constants
    {
        let delta = 2.0 * cfg.grid_tol;
        let ln_a = seq.norm_bound.ln();
        let ln_ai = seq.inv_norm_bound.ln();
        let g_up = e0.upper + delta;
        let g_lo = e0.lower - delta;
        let k_up = fitted_growth_constant(&sol0, g_up, true);
        let k_lo = fitted_growth_constant(&sol0, g_lo, false);
        let k_up_sharp = fitted_growth_constant(&sol0, e0.upper - delta, true);
        let k_lo_sharp = fitted_growth_constant(&sol0, e0.lower + delta, false);
        let cap_up = n_last * (ln_a - g_up).max(0.0) + 1e-9;
        let cap_lo = -n_last * (g_lo + ln_ai).max(0.0) - 1e-9;
        let sharp = delta * n_last * (1.0 - 1e-9);
        let ok = k_up <= cap_up && k_lo >= cap_lo && k_up_sharp >= sharp && k_lo_sharp <= -sharp;
        out.push(
            CheckEntry::new("exponents.growth_constant", id, delta)
                .measure("ln_k_above_upper", k_up)
                .measure("ln_k_below_lower", k_lo)
                .measure("ln_k_cap_above_upper", cap_up)
                .measure("ln_k_cap_below_lower", cap_lo)
                .measure("ln_k_inside_upper", k_up_sharp)
                .measure("ln_k_inside_lower", k_lo_sharp)
                .measure("sharpness_floor", sharp)
                .witness(json!({
                    "x0": x0,
                    "gamma_upper": g_up,
                    "smallest_ln_k_upper": k_up,
                    "gamma_lower": g_lo,
                    "largest_ln_k_lower": k_lo,
                }))
                .verdict(ok),
        );
    }

    // (iv) scaling invariance
    {
        let mut worst = 0.0_f64;
        let mut identical = true;
        for alpha in [-3.0, 0.25, 1e3] {
            let xs: Vec<f64> = x0.iter().map(|v| alpha * v).collect();
            let s = propagate_direction(&table, &xs, n_max)?;
            let e = bohl_exponents_direction(&s, &window)?;
            worst = worst
                .max((e.lower - e0.lower).abs())
                .max((e.upper - e0.upper).abs());
            identical &= e.lower == e0.lower && e.upper == e0.upper;
        }
        out.push(
            CheckEntry::new("exponents.scaling", id, 1e-12)
                .measure("max_difference", worst)
                .measure("bit_identical", identical)
                .verdict(worst <= 1e-12),
        );
    }

    // (v) sums of decaying solutions, on the shifted system
    {
        let name = "exponents.decaying_sum";
        if d == 1 {
            out.push(CheckEntry::new(name, id, tol).skip("scalar system has a single line"));
        } else {
            let gamma = e0.upper.max(e1.upper) + 0.2;
            let sum = sol0.combine(1.0, &sol1, 1.0)?;
            let es = bohl_exponents_direction(&log_ratio_shift(&sum, gamma), &window)?;
            let max_upper = e0.upper.max(e1.upper) - gamma;
            let ok = es.lower <= tol && es.upper <= max_upper + tol;
            out.push(
                CheckEntry::new(name, id, tol)
                    .measure("shift", gamma)
                    .measure("shifted_x0", [e0.lower - gamma, e0.upper - gamma])
                    .measure("shifted_x1", [e1.lower - gamma, e1.upper - gamma])
                    .measure("shifted_sum", interval_json(&es))
                    .verdict(ok),
            );
        }
    }

    // (vi) exponentially decaying perturbations
    {
        let name = "exponents.perturbation";
        let gap = e0.lower - e1.upper;
        if d == 1 || gap <= 0.2 + tol {
            out.push(
                CheckEntry::new(name, id, tol)
                    .measure("gap", gap)
                    .skip("no pair with lower(x0) − upper(x1) > 0.2"),
            );
        } else {
            let gamma = 0.5 * (e0.lower + e1.upper);
            let mut worst = f64::NEG_INFINITY;
            let mut sums = Vec::new();
            for eps in [1.0, 1e-3] {
                let sum = sol0.combine(1.0, &sol1, eps)?;
                let es = bohl_exponents_direction(&sum, &window)?;
                worst = worst.max(e0.lower - es.lower);
                sums.push(json!({ "eps": eps, "interval": interval_json(&es) }));
            }
            out.push(
                CheckEntry::new(name, id, tol)
                    .measure("shift", gamma)
                    .measure("x0", interval_json(&e0))
                    .measure("x1", interval_json(&e1))
                    .measure("sums", sums)
                    .measure("worst_lower_drop", worst)
                    .verdict(worst <= tol),
            );
        }
    }

    // window-family equivalence
    {
        let c = seq.lyapunov_constant();
        let t = (1e-2f64).max(2.0 * c.ln() / n_last);
        let dir = (e0.lower - e0_beyond.lower)
            .abs()
            .max((e0.upper - e0_beyond.upper).abs());
        let fs = (full.lower - full_beyond.lower)
            .abs()
            .max((full.upper - full_beyond.upper).abs());
        out.push(
            CheckEntry::new("exponents.representation", id, t)
                .measure("direction_all_m", interval_json(&e0))
                .measure("direction_m_beyond_n", interval_json(&e0_beyond))
                .measure("fullspace_all_m", interval_json(&full))
                .measure("fullspace_m_beyond_n", interval_json(&full_beyond))
                .measure("max_difference", dir.max(fs))
                .verdict(dir.max(fs) <= t),
        );
    }

    // accumulation points fill the Bohl interval
    {
        let rep = accumulation_interval_check(&sol0, &e0, &window, cfg.probe_count)?;
        let ok = rep.passed;
        let tol_used = rep.tol;
        out.push(
            CheckEntry::new("exponents.accumulation", id, tol_used)
                .measure("outside_windows", rep.outside_windows)
                .measure("worst_excess", rep.worst_excess)
                .measure("probes", &rep.probes)
                .witness(json!({ "x0": x0 }))
                .verdict(ok),
        );
    }

    // shift identity
    {
        let gamma = 0.3;
        let shifted = shift(&seq, gamma);
        let s = propagate_direction(&shifted, &x0, n_max)?;
        let es = bohl_exponents_direction(&s, &window)?;
        let diff = (es.lower - (e0.lower - gamma))
            .abs()
            .max((es.upper - (e0.upper - gamma)).abs());
        out.push(
            CheckEntry::new("exponents.shift_identity", id, 1e-9)
                .measure("gamma", gamma)
                .measure("shifted", interval_json(&es))
                .measure("max_difference", diff)
                .verdict(diff <= 1e-9),
        );
    }

    // sup/inf traces are monotone in the threshold
    {
        let ok = e0.is_monotone() && e1.is_monotone() && full.is_monotone();
        out.push(
            CheckEntry::new("exponents.threshold_monotone", id, 0.0)
                .measure("generic", e0.is_monotone())
                .measure("slow", e1.is_monotone())
                .measure("fullspace", full.is_monotone())
                .verdict(ok),
        );
    }
    Ok(out)
}

// ------------------------------------------------------------ spectra

/// The three spectra of one system.
#[derive(Debug, Clone)]
pub struct SpectrumTriple {
    pub bohl: SpectrumResult,
    pub bd: SpectrumResult,
    pub ed: SpectrumResult,
}

pub fn spectrum_triple(seq: &MatrixSequence, cfg: &SpectralConfig) -> Result<SpectrumTriple> {
    let mut an = Analysis::new(seq, cfg)?;
    let ed = an.ed_spectrum()?;
    let bohl = an.bohl_spectrum()?;
    let bd = an.bd_spectrum()?;
    Ok(SpectrumTriple { bohl, bd, ed })
}

/// Smallest gap between consecutive intervals, or `∞`.
fn smallest_gap(iv: &[Interval]) -> f64 {
    iv.windows(2)
        .map(|w| w[1].lo - w[0].hi)
        .fold(f64::INFINITY, f64::min)
}

/// Inclusion chain, endpoint identity, interval counts, route agreement and
/// filtration structure.
pub fn run_spectrum_relations(roster: &[RosterEntry], cfg: &CheckConfig) -> CheckReport {
    let entries: Vec<CheckEntry> = roster
        .par_iter()
        .flat_map_iter(|r| match relation_checks(r, cfg) {
            Ok(v) => v,
            Err(e) => vec![CheckEntry::error("relations", &r.id, &e)],
        })
        .collect();
    CheckReport::from_entries(entries)
}

fn relation_checks(r: &RosterEntry, cfg: &CheckConfig) -> Result<Vec<CheckEntry>> {
    let id = r.id.as_str();
    let seq = r.load()?;
    let d = seq.dim();
    let scfg = cfg.spectral(r.horizon);
    let t = spectrum_triple(&seq, &scfg)?;
    let tau = cfg.relation_tol();
    let mut out = Vec::new();

    let h = directed_hausdorff(&t.bohl.intervals, &t.bd.intervals);
    out.push(
        CheckEntry::new("relations.bohl_in_bd", id, tau)
            .measure("bohl", intervals_json(&t.bohl.intervals))
            .measure("bd", intervals_json(&t.bd.intervals))
            .measure("directed_hausdorff", h)
            .verdict(h <= tau),
    );

    let h = directed_hausdorff(&t.bd.intervals, &t.ed.intervals);
    out.push(
        CheckEntry::new("relations.bd_in_ed", id, tau)
            .measure("bd", intervals_json(&t.bd.intervals))
            .measure("ed", intervals_json(&t.ed.intervals))
            .measure("directed_hausdorff", h)
            .verdict(contained_in_fattened(&t.bd.intervals, &t.ed.intervals, tau)),
    );

    {
        let e = t.ed.method.endpoint_check.clone();
        let entry = CheckEntry::new("relations.ed_endpoints", id, tau)
            .measure("ed_min", t.ed.min())
            .measure("ed_max", t.ed.max())
            .measure("endpoint_check", &e);
        out.push(entry.verdict(e.is_some_and(|e| e.agrees)));
    }

    {
        let counts = [
            t.bohl.intervals.len(),
            t.bd.intervals.len(),
            t.ed.intervals.len(),
        ];
        let ok = counts.iter().all(|&c| (1..=d).contains(&c));
        out.push(
            CheckEntry::new("relations.interval_count", id, 0.0)
                .measure("dim", d)
                .measure("bohl_bd_ed", counts)
                .verdict(ok),
        );
    }

    {
        let name = "relations.ed_routes";
        match &t.ed.method.cross_check {
            Some(cc) => out.push(
                CheckEntry::new(name, id, cc.tolerance)
                    .measure("qr_diagonal", intervals_json(&t.ed.intervals))
                    .measure(&cc.route, intervals_json(&cc.intervals))
                    .measure("hausdorff", cc.hausdorff)
                    .verdict(cc.agrees),
            ),
            None => out.push(
                CheckEntry::new(name, id, tau).skip("second route runs for 2 ≤ d ≤ 3 only"),
            ),
        }
    }

    {
        let name = "relations.bd_routes";
        let cc = t.bd.method.cross_check.as_ref().expect("bd carries a cross-check");
        out.push(
            CheckEntry::new(name, id, cc.tolerance)
                .measure("closure", intervals_json(&t.bd.intervals))
                .measure(&cc.route, intervals_json(&cc.intervals))
                .measure("hausdorff", cc.hausdorff)
                .verdict(cc.agrees),
        );
    }

    for (name, spec) in [("relations.filtration_ed", &t.ed), ("relations.filtration_bd", &t.bd)] {
        let gap = smallest_gap(&spec.intervals);
        let entry = CheckEntry::new(name, id, 3.0 * cfg.grid_tol)
            .measure("filtration_dims", &spec.filtration_dims)
            .measure("smallest_gap", if gap.is_finite() { json!(gap) } else { Value::Null });
        if !spec.method.filtration_consistent && gap < 6.0 * cfg.grid_tol {
            out.push(entry.skip("gap midpoint within 3·grid_tol of a spectral edge"));
        } else {
            out.push(entry.verdict(spec.method.filtration_consistent));
        }
    }
    Ok(out)
}

// ------------------------------------------------------------ invariance

/// Spectra and direction exponents of `A` against `T(n+1)⁻¹A(n)T(n)`.
pub fn run_invariance_checks(cases: &[InvarianceCase], cfg: &CheckConfig) -> CheckReport {
    let entries: Vec<CheckEntry> = cases
        .par_iter()
        .flat_map_iter(|c| match invariance_checks(c, cfg) {
            Ok(v) => v,
            Err(e) => vec![CheckEntry::error("invariance", &c.id, &e)],
        })
        .collect();
    CheckReport::from_entries(entries)
}

fn invariance_checks(case: &InvarianceCase, cfg: &CheckConfig) -> Result<Vec<CheckEntry>> {
    let id = format!("{}:{}", case.id, case.system.id);
    let seq = case.system.load()?;
    let moved = transform(&seq, &case.transform)?;
    let scfg = cfg.spectral(case.system.horizon);
    let n_last = scfg.window.n_last() as f64;
    let cond = case.transform.condition_bound();
    let tol = cfg.relation_tol() + 2.0 * cond.ln() / n_last;

    let a = spectrum_triple(&seq, &scfg)?;
    let b = spectrum_triple(&moved, &scfg)?;
    let mut out = Vec::new();
    for (name, sa, sb) in [
        ("invariance.bohl", &a.bohl, &b.bohl),
        ("invariance.bd", &a.bd, &b.bd),
        ("invariance.ed", &a.ed, &b.ed),
    ] {
        let h = hausdorff(&sa.intervals, &sb.intervals);
        out.push(
            CheckEntry::new(name, &id, tol)
                .measure("condition_bound", cond)
                .measure("original", intervals_json(&sa.intervals))
                .measure("transformed", intervals_json(&sb.intervals))
                .measure("hausdorff", h)
                .measure("identical", sa.intervals == sb.intervals)
                .verdict(h <= tol),
        );
    }

    // x₀ for A corresponds to T(0)⁻¹x₀ for the transformed system
    let window = &scfg.window;
    let d = seq.dim();
    let x0 = seeded_direction(d, cfg.seed, 3);
    let y0: Vec<f64> = (case.transform.eval_inv(0) * nalgebra::DVector::from_column_slice(&x0))
        .iter()
        .copied()
        .collect();
    let ea = bohl_exponents_direction(&propagate_direction(&seq, &x0, window.n_max)?, window)?;
    let eb = bohl_exponents_direction(&propagate_direction(&moved, &y0, window.n_max)?, window)?;
    let dir_tol = cond.ln() / n_last + 1e-9;
    let diff = (ea.lower - eb.lower).abs().max((ea.upper - eb.upper).abs());
    out.push(
        CheckEntry::new("invariance.direction", &id, dir_tol)
            .measure("original", interval_json(&ea))
            .measure("transformed", interval_json(&eb))
            .measure("max_difference", diff)
            .witness(json!({ "x0": x0, "y0": y0 }))
            .verdict(diff <= dir_tol),
    );
    Ok(out)
}

// ------------------------------------------------------------ triangular

/// Spectra of an upper triangular system against those of its diagonal
/// part: inclusion for `Σ_B` and `Σ_BD`, equality for `Σ_ED`.
pub fn run_triangular_relations(roster: &[RosterEntry], cfg: &CheckConfig) -> CheckReport {
    let entries: Vec<CheckEntry> = roster
        .par_iter()
        .flat_map_iter(|r| match triangular_checks(r, cfg) {
            Ok(v) => v,
            Err(e) => vec![CheckEntry::error("triangular", &r.id, &e)],
        })
        .collect();
    CheckReport::from_entries(entries)
}

fn triangular_checks(r: &RosterEntry, cfg: &CheckConfig) -> Result<Vec<CheckEntry>> {
    let id = r.id.as_str();
    let seq = r.load()?;
    let d = seq.dim();
    let scfg = cfg.spectral(r.horizon);
    let tau = cfg.relation_tol();
    let mut out = Vec::new();

    // the roster promises upper triangular coefficients
    let lower_mass = (0..r.horizon.min(256))
        .map(|n| {
            let a = seq.eval(n);
            (0..d)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    if lower_mass > 0.0 {
        out.push(
            CheckEntry::new("triangular.structure", id, 0.0)
                .measure("max_below_diagonal", lower_mass)
                .verdict(false),
        );
        return Ok(out);
    }

    let diag = diagonal_of(&seq)?;
    let a = spectrum_triple(&seq, &scfg)?;
    let b = spectrum_triple(&diag, &scfg)?;
    let entries = (0..d)
        .map(|k| diagonal_entry(&seq, k))
        .collect::<Result<Vec<_>>>()?;
    let scalar = diagonal_spectrum(&entries, &scfg)?;

    let h = hausdorff(&a.ed.intervals, &b.ed.intervals);
    out.push(
        CheckEntry::new("triangular.ed_equality", id, tau)
            .measure("ed", intervals_json(&a.ed.intervals))
            .measure("ed_diagonal", intervals_json(&b.ed.intervals))
            .measure("hausdorff", h)
            .measure("directed_a_in_diag", directed_hausdorff(&a.ed.intervals, &b.ed.intervals))
            .measure("directed_diag_in_a", directed_hausdorff(&b.ed.intervals, &a.ed.intervals))
            .verdict(h <= tau),
    );
    for (name, sa, sb) in [
        ("triangular.bd_inclusion", &a.bd, &b.bd),
        ("triangular.bohl_inclusion", &a.bohl, &b.bohl),
    ] {
        let h = directed_hausdorff(&sa.intervals, &sb.intervals);
        out.push(
            CheckEntry::new(name, id, tau)
                .measure("system", intervals_json(&sa.intervals))
                .measure("diagonal_part", intervals_json(&sb.intervals))
                .measure("directed_hausdorff", h)
                .verdict(h <= tau),
        );
    }
    let h = hausdorff(&b.ed.intervals, &scalar.intervals);
    out.push(
        CheckEntry::new("triangular.scalar_union", id, tau)
            .measure("ed_diagonal", intervals_json(&b.ed.intervals))
            .measure("scalar_union", intervals_json(&scalar.intervals))
            .measure("hausdorff", h)
            .verdict(h <= tau),
    );
    Ok(out)
}

/// Which suites to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Exponents,
    Relations,
    Invariance,
    Triangular,
    All,
}

/// Runs a suite on the builtin rosters at horizons `{horizon/10, horizon}`.
pub fn run_builtin_suite(suite: Suite, horizon: usize, cfg: &CheckConfig) -> Result<CheckReport> {
    let horizons: Vec<usize> = if horizon >= 10 * 64 {
        vec![horizon / 10, horizon]
    } else {
        vec![horizon]
    };
    let roster = builtin_roster(&horizons);
    let small = horizons[0];
    let mut reports = Vec::new();
    if matches!(suite, Suite::Exponents | Suite::All) {
        reports.push(run_exponent_properties(&roster, cfg));
    }
    if matches!(suite, Suite::Relations | Suite::All) {
        reports.push(run_spectrum_relations(&roster, cfg));
    }
    if matches!(suite, Suite::Invariance | Suite::All) {
        let cases = builtin_invariance_cases(small, cfg.seed)?;
        reports.push(run_invariance_checks(&cases, cfg));
    }
    if matches!(suite, Suite::Triangular | Suite::All) {
        let tri: Vec<RosterEntry> = horizons.iter().flat_map(|&h| triangular_roster(h)).collect();
        reports.push(run_triangular_relations(&tri, cfg));
    }
    Ok(CheckReport::merge(reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_shape() {
        let r = builtin_roster(&[1000, 10_000]);
        assert_eq!(r.len(), 14);
        for e in &r {
            e.load().unwrap();
        }
        let ids: std::collections::BTreeSet<_> = r.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 14);
    }

    #[test]
    fn invariance_transforms_are_well_conditioned() {
        for case in builtin_invariance_cases(2000, 42).unwrap() {
            let k = case.transform.condition_bound();
            assert!(k <= 4.0 + 1e-9, "{}: {k}", case.id);
        }
    }

    #[test]
    fn exponent_suite_on_constant_scalar() {
        let roster = vec![RosterEntry::new(
            "constant_2",
            SystemSpec::constant(1, &[2.0], 4000),
            4000,
        )];
        let report = run_exponent_properties(&roster, &CheckConfig::default());
        assert!(report.passed(), "{}", report.to_json());
        let bounds = report
            .checks
            .iter()
            .find(|c| c.name == "exponents.bounds")
            .unwrap();
        // ln 2 sits exactly on the upper bound
        let full = bounds.measured["fullspace"].as_array().unwrap();
        assert!((full[1].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perturbation_check_runs_on_diagonal() {
        let roster = vec![builtin_systems(4000).swap_remove(2)];
        let report = run_exponent_properties(&roster, &CheckConfig::default());
        let pert = report
            .checks
            .iter()
            .find(|c| c.name == "exponents.perturbation")
            .unwrap();
        assert_eq!(pert.status, CheckStatus::Pass, "{}", report.to_json());
        assert!(report.passed(), "{}", report.to_json());
    }

    #[test]
    fn report_order_is_fixed() {
        let roster = builtin_systems(2000);
        let a = run_exponent_properties(&roster[..3], &CheckConfig::default());
        let b = run_exponent_properties(&roster[..3], &CheckConfig::default());
        assert_eq!(a.to_json(), b.to_json());
        let keys: Vec<_> = a.checks.iter().map(|c| (&c.name, &c.system_id)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
