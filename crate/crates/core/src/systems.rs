//! Coefficient sequences `A(n)` of `x(n+1) = A(n) x(n)`: declarative specs,
//! builtin generators, validation, γ-shifts and dynamic-equivalence
//! transforms.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm, Matrix};

/// Determinant magnitude below which a matrix in a spec is rejected.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Constant,
    Periodic,
    Diagonal,
    UpperTriangular,
    DyadicSwitchingScalar,
    RandomQdq,
    File,
}

/// Serialized description of a system:
/// `{"kind": "...", "dim": d, "params": {...}, "horizon_hint": N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub dim: usize,
    #[serde(default)]
    pub params: serde_json::Value,
    pub horizon_hint: usize,
}

/// One diagonal entry: a constant or a periodic pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarPattern {
    Constant(f64),
    Periodic(Vec<f64>),
}

impl ScalarPattern {
    fn at(&self, n: usize) -> f64 {
        match self {
            ScalarPattern::Constant(a) => *a,
            ScalarPattern::Periodic(p) => p[n % p.len()],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            ScalarPattern::Constant(a) => std::slice::from_ref(a),
            ScalarPattern::Periodic(p) => p,
        }
    }
}

#[derive(Deserialize)]
struct ConstantParams {
    matrix: Vec<f64>,
}

#[derive(Deserialize)]
struct PeriodicParams {
    #[serde(default)]
    matrices: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    matrix: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct DiagonalParams {
    entries: Vec<ScalarPattern>,
}

#[derive(Deserialize)]
struct DyadicParams {
    #[serde(default = "one")]
    amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct RandomQdqParams {
    seed: u64,
    d_lo: f64,
    d_hi: f64,
}

#[derive(Deserialize)]
struct FileParams {
    path: PathBuf,
    #[serde(default = "json_matrices")]
    format: String,
}

fn json_matrices() -> String {
    "json-matrices".to_string()
}

#[derive(Deserialize, Default)]
struct DeclaredOverride {
    #[serde(default)]
    declared_norm_bound: Option<f64>,
    #[serde(default)]
    declared_inv_norm_bound: Option<f64>,
}

impl SystemSpec {
    pub fn constant(dim: usize, row_major: &[f64], horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::Constant,
            dim,
            params: serde_json::json!({ "matrix": row_major }),
            horizon_hint,
        }
    }

    pub fn periodic(dim: usize, matrices: &[Vec<f64>], horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::Periodic,
            dim,
            params: serde_json::json!({ "matrices": matrices }),
            horizon_hint,
        }
    }

    pub fn diagonal(entries: Vec<ScalarPattern>, horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::Diagonal,
            dim: entries.len(),
            params: serde_json::json!({ "entries": entries }),
            horizon_hint,
        }
    }

    pub fn upper_triangular(dim: usize, matrices: &[Vec<f64>], horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::UpperTriangular,
            dim,
            params: serde_json::json!({ "matrices": matrices }),
            horizon_hint,
        }
    }

    pub fn dyadic(horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::DyadicSwitchingScalar,
            dim: 1,
            params: serde_json::json!({}),
            horizon_hint,
        }
    }

    pub fn random_qdq(dim: usize, seed: u64, d_lo: f64, d_hi: f64, horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::RandomQdq,
            dim,
            params: serde_json::json!({ "seed": seed, "d_lo": d_lo, "d_hi": d_hi }),
            horizon_hint,
        }
    }

    pub fn file(dim: usize, path: impl AsRef<Path>, horizon_hint: usize) -> Self {
        Self {
            kind: SystemKind::File,
            dim,
            params: serde_json::json!({ "path": path.as_ref(), "format": "json-matrices" }),
            horizon_hint,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn params<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        let value = if self.params.is_null() {
            serde_json::json!({})
        } else {
            self.params.clone()
        };
        serde_json::from_value(value)
            .map_err(|e| Error::MalformedSpec(format!("{:?} params: {e}", self.kind)))
    }
}

/// Evaluable coefficient family. Implementations must be pure: the same
/// `n` always yields the same matrix, whichever thread asks and in
/// whichever order.
pub trait CoefficientSource: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn matrix(&self, n: usize) -> Matrix;
    fn inverse(&self, n: usize) -> Matrix;
    /// `Some(len)` when the family is only defined for `n < len`.
    fn defined_len(&self) -> Option<usize> {
        None
    }
}

/// A Lyapunov sequence together with its declared norm bounds.
#[derive(Clone)]
pub struct MatrixSequence {
    source: Arc<dyn CoefficientSource>,
    shift: f64,
    /// Declared (or certified) `sup ‖A(n)‖`.
    pub norm_bound: f64,
    /// Declared (or certified) `sup ‖A(n)⁻¹‖`.
    pub inv_norm_bound: f64,
    pub horizon_hint: usize,
}

impl fmt::Debug for MatrixSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixSequence")
            .field("source", &self.source)
            .field("shift", &self.shift)
            .field("norm_bound", &self.norm_bound)
            .field("inv_norm_bound", &self.inv_norm_bound)
            .finish()
    }
}

impl MatrixSequence {
    pub fn from_source(
        source: Arc<dyn CoefficientSource>,
        norm_bound: f64,
        inv_norm_bound: f64,
        horizon_hint: usize,
    ) -> Self {
        Self {
            source,
            shift: 0.0,
            norm_bound,
            inv_norm_bound,
            horizon_hint,
        }
    }

    /// Wraps a closure; inverses are computed by LU and bounds by scanning
    /// `n < horizon_hint`.
    pub fn from_fn<F>(dim: usize, horizon_hint: usize, f: F) -> Result<Self>
    where
        F: Fn(usize) -> Matrix + Send + Sync + 'static,
    {
        let source = Arc::new(FnSource { dim, f: Box::new(f) });
        for n in 0..horizon_hint.min(64) {
            let m = source.matrix(n);
            if m.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.nrows(),
                });
            }
            check_invertible(&m, n)?;
        }
        let (nb, ib) = scan_bounds(source.as_ref(), horizon_hint.max(1));
        Ok(Self::from_source(source, nb, ib, horizon_hint))
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn defined_len(&self) -> Option<usize> {
        self.source.defined_len()
    }

    /// Accumulated γ of all shifts applied so far.
    pub fn total_shift(&self) -> f64 {
        self.shift
    }

    pub fn eval(&self, n: usize) -> Matrix {
        let m = self.source.matrix(n);
        if self.shift == 0.0 {
            m
        } else {
            m * (-self.shift).exp()
        }
    }

    pub fn eval_inv(&self, n: usize) -> Matrix {
        let m = self.source.inverse(n);
        if self.shift == 0.0 {
            m
        } else {
            m * self.shift.exp()
        }
    }

    /// Fails if the sequence is not defined on `[0, horizon)`.
    pub fn ensure_horizon(&self, horizon: usize) -> Result<()> {
        match self.defined_len() {
            Some(len) if len < horizon => Err(Error::HorizonExceedsData {
                len,
                requested: horizon,
            }),
            _ => Ok(()),
        }
    }

    /// Evaluates `A(n)` and `A(n)⁻¹` for `n < len` into memory.
    pub fn tabulate(&self, len: usize) -> Result<Tabulated> {
        self.ensure_horizon(len)?;
        let pairs: Vec<(Matrix, Matrix)> = (0..len)
            .into_par_iter()
            .map(|n| (self.eval(n), self.eval_inv(n)))
            .collect();
        let (a, a_inv) = pairs.into_iter().unzip();
        Ok(Tabulated {
            dim: self.dim(),
            a,
            a_inv,
        })
    }

    /// `max(norm_bound, inv_norm_bound)`, the constant `C` of the window
    /// representation bounds.
    pub fn lyapunov_constant(&self) -> f64 {
        self.norm_bound.max(self.inv_norm_bound)
    }

    pub fn with_declared_bounds(mut self, norm_bound: f64, inv_norm_bound: f64) -> Self {
        self.norm_bound = norm_bound;
        self.inv_norm_bound = inv_norm_bound;
        self
    }
}

/// `A(n)`, `A(n)⁻¹` held in memory for `n < len`.
#[derive(Debug, Clone)]
pub struct Tabulated {
    pub dim: usize,
    pub a: Vec<Matrix>,
    pub a_inv: Vec<Matrix>,
}

impl Tabulated {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Observed `(sup ‖A‖, sup ‖A⁻¹‖)`.
    pub fn observed_bounds(&self) -> (f64, f64) {
        let nb = self.a.par_iter().map(spectral_norm).reduce(|| 0.0, f64::max);
        let ib = self
            .a_inv
            .par_iter()
            .map(spectral_norm)
            .reduce(|| 0.0, f64::max);
        (nb, ib)
    }

    /// Wraps the table as a sequence defined for `n < len`.
    pub fn into_sequence(self) -> MatrixSequence {
        let (nb, ib) = self.observed_bounds();
        let len = self.len();
        MatrixSequence::from_source(
            Arc::new(TableSource {
                dim: self.dim,
                a: self.a,
                a_inv: self.a_inv,
            }),
            nb,
            ib,
            len,
        )
    }
}

/// Bounded invertible `T(n)` with bounded inverse.
#[derive(Debug, Clone)]
pub struct TransformSequence(MatrixSequence);

impl TransformSequence {
    pub fn new(seq: MatrixSequence) -> Self {
        Self(seq)
    }

    pub fn identity(dim: usize) -> Self {
        Self(load_constant(&Matrix::identity(dim, dim), 1).expect("identity is invertible"))
    }

    pub fn constant(t: &Matrix) -> Result<Self> {
        Ok(Self(load_constant(t, 1)?))
    }

    pub fn from_fn<F>(dim: usize, horizon_hint: usize, f: F) -> Result<Self>
    where
        F: Fn(usize) -> Matrix + Send + Sync + 'static,
    {
        Ok(Self(MatrixSequence::from_fn(dim, horizon_hint, f)?))
    }

    /// `n ↦ T(n)⁻¹`.
    pub fn inverse_sequence(&self) -> Self {
        let seq = MatrixSequence::from_source(
            Arc::new(Swapped(self.0.clone())),
            self.0.inv_norm_bound,
            self.0.norm_bound,
            self.0.horizon_hint,
        );
        Self(seq)
    }

    pub fn as_sequence(&self) -> &MatrixSequence {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn eval(&self, n: usize) -> Matrix {
        self.0.eval(n)
    }

    pub fn eval_inv(&self, n: usize) -> Matrix {
        self.0.eval_inv(n)
    }

    /// `sup ‖T‖ · sup ‖T⁻¹‖`.
    pub fn condition_bound(&self) -> f64 {
        self.0.norm_bound * self.0.inv_norm_bound
    }
}

fn check_invertible(m: &Matrix, index: usize) -> Result<()> {
    let det = m.determinant();
    if !det.is_finite() || det.abs() < SINGULARITY_THRESHOLD {
        return Err(Error::SingularMatrix { index, det });
    }
    Ok(())
}

fn invert(m: &Matrix, index: usize) -> Result<Matrix> {
    check_invertible(m, index)?;
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix { index, det: 0.0 })
}

fn matrix_from_row_major(dim: usize, data: &[f64], what: &str) -> Result<Matrix> {
    if data.len() != dim * dim {
        return Err(Error::MalformedSpec(format!(
            "{what}: expected {} entries, got {}",
            dim * dim,
            data.len()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::MalformedSpec(format!("{what}: non-finite entry")));
    }
    Ok(Matrix::from_row_slice(dim, dim, data))
}

fn scan_bounds(source: &dyn CoefficientSource, horizon: usize) -> (f64, f64) {
    let len = source.defined_len().map_or(horizon, |l| l.min(horizon));
    (0..len)
        .into_par_iter()
        .map(|n| {
            (
                spectral_norm(&source.matrix(n)),
                spectral_norm(&source.inverse(n)),
            )
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
}

/// Builds an evaluable sequence from a spec.
pub fn load_system(spec: &SystemSpec) -> Result<MatrixSequence> {
    let d = spec.dim;
    if d == 0 {
        return Err(Error::MalformedSpec("dim must be at least 1".into()));
    }
    if spec.horizon_hint == 0 {
        return Err(Error::MalformedSpec("horizon_hint must be positive".into()));
    }
    let horizon = spec.horizon_hint;
    let seq = match spec.kind {
        SystemKind::Constant => {
            let p: ConstantParams = spec.params()?;
            let a = matrix_from_row_major(d, &p.matrix, "constant matrix")?;
            load_constant(&a, horizon)?
        }
        SystemKind::Periodic | SystemKind::UpperTriangular => {
            let p: PeriodicParams = spec.params()?;
            let raw = match (p.matrices, p.matrix) {
                (Some(ms), _) => ms,
                (None, Some(m)) => vec![m],
                (None, None) => {
                    return Err(Error::MalformedSpec("missing `matrices`".into()));
                }
            };
            if raw.is_empty() {
                return Err(Error::MalformedSpec("period must be at least 1".into()));
            }
            let mats = raw
                .iter()
                .enumerate()
                .map(|(i, m)| matrix_from_row_major(d, m, &format!("period matrix {i}")))
                .collect::<Result<Vec<_>>>()?;
            if spec.kind == SystemKind::UpperTriangular {
                for (i, m) in mats.iter().enumerate() {
                    for r in 0..d {
                        for c in 0..r {
                            if m[(r, c)] != 0.0 {
                                return Err(Error::MalformedSpec(format!(
                                    "matrix {i} is not upper triangular at ({r},{c})"
                                )));
                            }
                        }
                    }
                }
            }
            load_periodic(mats, horizon)?
        }
        SystemKind::Diagonal => {
            let p: DiagonalParams = spec.params()?;
            if p.entries.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.entries.len(),
                });
            }
            load_diagonal(p.entries, horizon)?
        }
        SystemKind::DyadicSwitchingScalar => {
            if d != 1 {
                return Err(Error::MalformedSpec(
                    "dyadic_switching_scalar requires dim = 1".into(),
                ));
            }
            let p: DyadicParams = spec.params()?;
            if !p.amplitude.is_finite() {
                return Err(Error::MalformedSpec("amplitude must be finite".into()));
            }
            let bound = p.amplitude.abs().exp();
            MatrixSequence::from_source(
                Arc::new(DyadicSource {
                    amplitude: p.amplitude,
                }),
                bound,
                bound,
                horizon,
            )
        }
        SystemKind::RandomQdq => {
            let p: RandomQdqParams = spec.params()?;
            if !(p.d_lo > 0.0 && p.d_lo <= p.d_hi && p.d_hi.is_finite()) {
                return Err(Error::MalformedSpec(
                    "random_qdq requires 0 < d_lo <= d_hi".into(),
                ));
            }
            MatrixSequence::from_source(
                Arc::new(RandomQdqSource {
                    dim: d,
                    seed: p.seed,
                    d_lo: p.d_lo,
                    d_hi: p.d_hi,
                }),
                p.d_hi,
                1.0 / p.d_lo,
                horizon,
            )
        }
        SystemKind::File => {
            let p: FileParams = spec.params()?;
            if p.format != "json-matrices" {
                return Err(Error::MalformedSpec(format!(
                    "unsupported file format `{}`",
                    p.format
                )));
            }
            let mats = read_matrix_file(&p.path, d)?;
            load_table(mats, horizon)?
        }
    };
    let over: DeclaredOverride = match &spec.params {
        serde_json::Value::Object(_) => serde_json::from_value(spec.params.clone()).unwrap_or_default(),
        _ => DeclaredOverride::default(),
    };
    let nb = over.declared_norm_bound.unwrap_or(seq.norm_bound);
    let ib = over.declared_inv_norm_bound.unwrap_or(seq.inv_norm_bound);
    Ok(seq.with_declared_bounds(nb, ib))
}

fn load_constant(a: &Matrix, horizon: usize) -> Result<MatrixSequence> {
    let inv = invert(a, 0)?;
    let nb = spectral_norm(a);
    let ib = spectral_norm(&inv);
    Ok(MatrixSequence::from_source(
        Arc::new(PeriodicSource {
            dim: a.nrows(),
            mats: vec![a.clone()],
            invs: vec![inv],
        }),
        nb,
        ib,
        horizon,
    ))
}

fn load_periodic(mats: Vec<Matrix>, horizon: usize) -> Result<MatrixSequence> {
    let invs = mats
        .iter()
        .enumerate()
        .map(|(i, m)| invert(m, i))
        .collect::<Result<Vec<_>>>()?;
    let nb = mats.iter().map(spectral_norm).fold(0.0, f64::max);
    let ib = invs.iter().map(spectral_norm).fold(0.0, f64::max);
    Ok(MatrixSequence::from_source(
        Arc::new(PeriodicSource {
            dim: mats[0].nrows(),
            mats,
            invs,
        }),
        nb,
        ib,
        horizon,
    ))
}

fn load_diagonal(entries: Vec<ScalarPattern>, horizon: usize) -> Result<MatrixSequence> {
    let mut nb = 0.0_f64;
    let mut ib = 0.0_f64;
    for (k, e) in entries.iter().enumerate() {
        let vals = e.values();
        if vals.is_empty() {
            return Err(Error::MalformedSpec(format!("diagonal entry {k} has empty period")));
        }
        for &v in vals {
            if !v.is_finite() || v.abs() < SINGULARITY_THRESHOLD {
                return Err(Error::SingularMatrix { index: k, det: v });
            }
            nb = nb.max(v.abs());
            ib = ib.max(1.0 / v.abs());
        }
    }
    Ok(MatrixSequence::from_source(
        Arc::new(DiagonalSource { entries }),
        nb,
        ib,
        horizon,
    ))
}

fn load_table(mats: Vec<Matrix>, horizon: usize) -> Result<MatrixSequence> {
    if mats.is_empty() {
        return Err(Error::MalformedSpec("matrix table is empty".into()));
    }
    let invs = mats
        .iter()
        .enumerate()
        .map(|(i, m)| invert(m, i))
        .collect::<Result<Vec<_>>>()?;
    let table = Tabulated {
        dim: mats[0].nrows(),
        a: mats,
        a_inv: invs,
    };
    let mut seq = table.into_sequence();
    seq.horizon_hint = horizon;
    Ok(seq)
}

/// Reads a `json-matrices` file: `[[row-major d·d numbers], ...]`.
pub fn read_matrix_file(path: &Path, dim: usize) -> Result<Vec<Matrix>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::MatrixFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    raw.iter()
        .enumerate()
        .map(|(i, m)| {
            matrix_from_row_major(dim, m, &format!("entry {i}")).map_err(|e| Error::MatrixFile {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Serializes matrices in the `json-matrices` format.
pub fn matrices_to_json(mats: &[Matrix]) -> String {
    let rows: Vec<Vec<f64>> = mats
        .iter()
        .map(|m| {
            let mut v = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    v.push(m[(i, j)]);
                }
            }
            v
        })
        .collect();
    serde_json::to_string(&rows).expect("finite matrices serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationFlag {
    NormBoundExceeded,
    InverseNormBoundExceeded,
    InverseResidual,
    NotLyapunov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub horizon: usize,
    pub declared_norm_bound: f64,
    pub declared_inv_norm_bound: f64,
    pub observed_norm_bound: f64,
    pub observed_inv_norm_bound: f64,
    pub worst_inverse_residual: f64,
    pub flags: Vec<ValidationFlag>,
}

impl LyapunovReport {
    pub fn ok(&self) -> bool {
        self.flags.is_empty()
    }
}

const BOUND_REL_TOL: f64 = 1e-9;
const INVERSE_RESIDUAL_TOL: f64 = 1e-12;

/// Scans `n < horizon` and compares observed against declared bounds.
pub fn validate_lyapunov(seq: &MatrixSequence, horizon: usize) -> LyapunovReport {
    let len = seq.defined_len().map_or(horizon, |l| l.min(horizon)).max(1);
    let (nb, ib, res) = (0..len)
        .into_par_iter()
        .map(|n| {
            let a = seq.eval(n);
            let ai = seq.eval_inv(n);
            (
                spectral_norm(&a),
                spectral_norm(&ai),
                linalg::identity_residual(&a, &ai),
            )
        })
        .reduce(
            || (0.0, 0.0, 0.0),
            |x, y| (x.0.max(y.0), x.1.max(y.1), x.2.max(y.2)),
        );
    let mut flags = Vec::new();
    if nb > seq.norm_bound * (1.0 + BOUND_REL_TOL) {
        flags.push(ValidationFlag::NormBoundExceeded);
    }
    if ib > seq.inv_norm_bound * (1.0 + BOUND_REL_TOL) {
        flags.push(ValidationFlag::InverseNormBoundExceeded);
    }
    if res > INVERSE_RESIDUAL_TOL {
        flags.push(ValidationFlag::InverseResidual);
    }
    if seq.norm_bound.max(seq.inv_norm_bound) < 1.0 {
        flags.push(ValidationFlag::NotLyapunov);
    }
    LyapunovReport {
        horizon: len,
        declared_norm_bound: seq.norm_bound,
        declared_inv_norm_bound: seq.inv_norm_bound,
        observed_norm_bound: nb,
        observed_inv_norm_bound: ib,
        worst_inverse_residual: res,
        flags,
    }
}

/// The γ-shifted system `e^{−γ} A(n)`.
pub fn shift(seq: &MatrixSequence, gamma: f64) -> MatrixSequence {
    let mut out = seq.clone();
    out.shift += gamma;
    out.norm_bound = seq.norm_bound * (-gamma).exp();
    out.inv_norm_bound = seq.inv_norm_bound * gamma.exp();
    out
}

/// The dynamically equivalent system `T(n+1)⁻¹ A(n) T(n)`.
pub fn transform(seq: &MatrixSequence, t: &TransformSequence) -> Result<MatrixSequence> {
    if seq.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.dim(),
            got: t.dim(),
        });
    }
    let k = t.condition_bound();
    Ok(MatrixSequence::from_source(
        Arc::new(Conjugated {
            base: seq.clone(),
            t: t.clone(),
        }),
        seq.norm_bound * k,
        seq.inv_norm_bound * k,
        seq.horizon_hint,
    ))
}

/// `n ↦ diag(A(n))`, the diagonal part of a (triangular) system.
pub fn diagonal_of(seq: &MatrixSequence) -> Result<MatrixSequence> {
    let source = DiagonalOf(seq.clone());
    let horizon = seq.horizon_hint.max(1);
    for n in 0..horizon.min(64) {
        let m = source.matrix(n);
        check_invertible(&m, n)?;
    }
    let (nb, ib) = scan_bounds(&source, horizon);
    Ok(MatrixSequence::from_source(Arc::new(source), nb, ib, horizon))
}

/// `k`-th diagonal entry `n ↦ [A(n)_kk]` as a scalar sequence.
pub fn diagonal_entry(seq: &MatrixSequence, k: usize) -> Result<MatrixSequence> {
    if k >= seq.dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.dim(),
            got: k,
        });
    }
    let source = DiagonalEntry(seq.clone(), k);
    let horizon = seq.horizon_hint.max(1);
    let (nb, ib) = scan_bounds(&source, horizon);
    Ok(MatrixSequence::from_source(Arc::new(source), nb, ib, horizon))
}

// ---------------------------------------------------------------------------
// sources

#[derive(Debug)]
struct PeriodicSource {
    dim: usize,
    mats: Vec<Matrix>,
    invs: Vec<Matrix>,
}

impl CoefficientSource for PeriodicSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn matrix(&self, n: usize) -> Matrix {
        self.mats[n % self.mats.len()].clone()
    }
    fn inverse(&self, n: usize) -> Matrix {
        self.invs[n % self.invs.len()].clone()
    }
}

#[derive(Debug)]
struct DiagonalSource {
    entries: Vec<ScalarPattern>,
}

impl CoefficientSource for DiagonalSource {
    fn dim(&self) -> usize {
        self.entries.len()
    }
    fn matrix(&self, n: usize) -> Matrix {
        let d = self.entries.len();
        Matrix::from_fn(d, d, |i, j| if i == j { self.entries[i].at(n) } else { 0.0 })
    }
    fn inverse(&self, n: usize) -> Matrix {
        let d = self.entries.len();
        Matrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 / self.entries[i].at(n)
            } else {
                0.0
            }
        })
    }
}

/// `a(n) = e^{±amplitude}`, sign `+` when `⌊log₂(n+1)⌋` is even.
#[derive(Debug)]
struct DyadicSource {
    amplitude: f64,
}

pub fn dyadic_sign(n: usize) -> f64 {
    let block = usize::BITS - 1 - (n + 1).leading_zeros();
    if block % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl CoefficientSource for DyadicSource {
    fn dim(&self) -> usize {
        1
    }
    fn matrix(&self, n: usize) -> Matrix {
        Matrix::from_element(1, 1, (dyadic_sign(n) * self.amplitude).exp())
    }
    fn inverse(&self, n: usize) -> Matrix {
        Matrix::from_element(1, 1, (-dyadic_sign(n) * self.amplitude).exp())
    }
}

/// `A(n) = Q₁(n) D(n) Q₂(n)` with fresh orthogonal factors per `n`. The
/// generator for index `n` is keyed by `(seed, n)` so evaluation order
/// does not matter.
#[derive(Debug)]
struct RandomQdqSource {
    dim: usize,
    seed: u64,
    d_lo: f64,
    d_hi: f64,
}

impl RandomQdqSource {
    fn factors(&self, n: usize) -> (Matrix, Vec<f64>, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(n as u64);
        let d = self.dim;
        let mut gaussian = || {
            let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
            g
        };
        let (q1, _) = linalg::qr_positive(&gaussian());
        let (q2, _) = linalg::qr_positive(&gaussian());
        let uni = Uniform::new_inclusive(self.d_lo, self.d_hi).expect("valid range");
        let diag: Vec<f64> = (0..d).map(|_| uni.sample(&mut rng)).collect();
        (q1, diag, q2)
    }
}

impl CoefficientSource for RandomQdqSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn matrix(&self, n: usize) -> Matrix {
        let (q1, diag, q2) = self.factors(n);
        let dm = Matrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        q1 * dm * q2
    }
    fn inverse(&self, n: usize) -> Matrix {
        let (q1, diag, q2) = self.factors(n);
        let inv: Vec<f64> = diag.iter().map(|x| 1.0 / x).collect();
        let dm = Matrix::from_diagonal(&nalgebra::DVector::from_vec(inv));
        q2.transpose() * dm * q1.transpose()
    }
}

#[derive(Debug)]
struct TableSource {
    dim: usize,
    a: Vec<Matrix>,
    a_inv: Vec<Matrix>,
}

impl CoefficientSource for TableSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn matrix(&self, n: usize) -> Matrix {
        self.a[n].clone()
    }
    fn inverse(&self, n: usize) -> Matrix {
        self.a_inv[n].clone()
    }
    fn defined_len(&self) -> Option<usize> {
        Some(self.a.len())
    }
}

struct FnSource {
    dim: usize,
    f: Box<dyn Fn(usize) -> Matrix + Send + Sync>,
}

impl fmt::Debug for FnSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnSource(dim = {})", self.dim)
    }
}

impl CoefficientSource for FnSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn matrix(&self, n: usize) -> Matrix {
        (self.f)(n)
    }
    fn inverse(&self, n: usize) -> Matrix {
        (self.f)(n)
            .try_inverse()
            .expect("closure-backed sequence must stay invertible")
    }
}

#[derive(Debug)]
struct Swapped(MatrixSequence);

impl CoefficientSource for Swapped {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn matrix(&self, n: usize) -> Matrix {
        self.0.eval_inv(n)
    }
    fn inverse(&self, n: usize) -> Matrix {
        self.0.eval(n)
    }
    fn defined_len(&self) -> Option<usize> {
        self.0.defined_len()
    }
}

#[derive(Debug)]
struct Conjugated {
    base: MatrixSequence,
    t: TransformSequence,
}

impl CoefficientSource for Conjugated {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn matrix(&self, n: usize) -> Matrix {
        self.t.eval_inv(n + 1) * self.base.eval(n) * self.t.eval(n)
    }
    fn inverse(&self, n: usize) -> Matrix {
        self.t.eval_inv(n) * self.base.eval_inv(n) * self.t.eval(n + 1)
    }
    fn defined_len(&self) -> Option<usize> {
        let t_len = self.t.as_sequence().defined_len().map(|l| l.saturating_sub(1));
        match (self.base.defined_len(), t_len) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug)]
struct DiagonalOf(MatrixSequence);

impl CoefficientSource for DiagonalOf {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn matrix(&self, n: usize) -> Matrix {
        Matrix::from_diagonal(&self.0.eval(n).diagonal())
    }
    fn inverse(&self, n: usize) -> Matrix {
        Matrix::from_diagonal(&self.0.eval(n).diagonal().map(|x| 1.0 / x))
    }
    fn defined_len(&self) -> Option<usize> {
        self.0.defined_len()
    }
}

#[derive(Debug)]
struct DiagonalEntry(MatrixSequence, usize);

impl CoefficientSource for DiagonalEntry {
    fn dim(&self) -> usize {
        1
    }
    fn matrix(&self, n: usize) -> Matrix {
        Matrix::from_element(1, 1, self.0.eval(n)[(self.1, self.1)])
    }
    fn inverse(&self, n: usize) -> Matrix {
        Matrix::from_element(1, 1, 1.0 / self.0.eval(n)[(self.1, self.1)])
    }
    fn defined_len(&self) -> Option<usize> {
        self.0.defined_len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(seq: &MatrixSequence, n: usize) -> f64 {
        seq.eval(n)[(0, 0)]
    }

    #[test]
    fn constant_scalar_reads_back() {
        let seq = load_system(&SystemSpec::constant(1, &[2.0], 100)).unwrap();
        for n in [0, 1, 57] {
            assert_eq!(scalar(&seq, n), 2.0);
        }
        assert_eq!(seq.norm_bound, 2.0);
        assert_eq!(seq.inv_norm_bound, 0.5);
    }

    #[test]
    fn periodic_scalar_reads_back() {
        let seq = load_system(&SystemSpec::periodic(1, &[vec![1.0], vec![4.0]], 100)).unwrap();
        let got: Vec<f64> = (0..5).map(|n| scalar(&seq, n)).collect();
        assert_eq!(got, vec![1.0, 4.0, 1.0, 4.0, 1.0]);
        assert_eq!(seq.norm_bound, 4.0);
    }

    #[test]
    fn random_qdq_bounds_hold_on_scan() {
        let seq = load_system(&SystemSpec::random_qdq(3, 42, 0.5, 2.0, 500)).unwrap();
        assert!(seq.norm_bound <= 2.0 && seq.inv_norm_bound <= 2.0);
        let (mut nb, mut ib) = (0.0_f64, 0.0_f64);
        for n in 0..500 {
            nb = nb.max(spectral_norm(&seq.eval(n)));
            ib = ib.max(spectral_norm(&seq.eval_inv(n)));
        }
        assert!(nb <= 2.0 + 1e-12, "{nb}");
        assert!(ib <= 2.0 + 1e-12, "{ib}");
        assert!(validate_lyapunov(&seq, 500).ok());
    }

    #[test]
    fn random_qdq_is_order_independent() {
        let seq = load_system(&SystemSpec::random_qdq(3, 9, 0.5, 2.0, 10)).unwrap();
        let late = seq.eval(7);
        let _ = seq.eval(3);
        assert_eq!(seq.eval(7), late);
        let other = load_system(&SystemSpec::random_qdq(3, 10, 0.5, 2.0, 10)).unwrap();
        assert_ne!(other.eval(7), late);
    }

    #[test]
    fn singular_and_malformed_specs_are_rejected() {
        let singular = SystemSpec::constant(2, &[1.0, 2.0, 2.0, 4.0], 10);
        assert!(matches!(
            load_system(&singular),
            Err(Error::SingularMatrix { .. })
        ));
        let short = SystemSpec::constant(2, &[1.0, 2.0], 10);
        assert!(matches!(load_system(&short), Err(Error::MalformedSpec(_))));
        let lower = SystemSpec::upper_triangular(2, &[vec![1.0, 0.0, 1.0, 1.0]], 10);
        assert!(matches!(load_system(&lower), Err(Error::MalformedSpec(_))));
        let bad_range = SystemSpec::random_qdq(2, 1, 2.0, 1.0, 10);
        assert!(load_system(&bad_range).is_err());
        let empty_period = SystemSpec::periodic(1, &[], 10);
        assert!(load_system(&empty_period).is_err());
    }

    #[test]
    fn validate_constant_and_diagonal() {
        let seq = load_system(&SystemSpec::constant(1, &[2.0], 100)).unwrap();
        let r = validate_lyapunov(&seq, 100);
        assert_eq!(r.observed_norm_bound, 2.0);
        assert_eq!(r.observed_inv_norm_bound, 0.5);
        assert!(r.ok());

        let diag = load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            100,
        ))
        .unwrap();
        let r = validate_lyapunov(&diag, 100);
        assert_abs_diff_eq!(r.observed_norm_bound, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.observed_inv_norm_bound, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn understated_bound_is_flagged() {
        let mut spec = SystemSpec::constant(1, &[2.0], 10);
        spec.params["declared_norm_bound"] = serde_json::json!(1.9);
        let seq = load_system(&spec).unwrap();
        let r = validate_lyapunov(&seq, 10);
        assert!(r.flags.contains(&ValidationFlag::NormBoundExceeded));
    }

    #[test]
    fn shift_examples() {
        let seq = load_system(&SystemSpec::constant(1, &[2.0], 10)).unwrap();
        let one = shift(&seq, 2f64.ln());
        assert_abs_diff_eq!(scalar(&one, 3), 1.0, epsilon = 1e-15);
        assert_eq!(shift(&seq, 0.0).eval(4), seq.eval(4));

        let diag = load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            10,
        ))
        .unwrap();
        let s = shift(&diag, 1.0);
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(s.eval(0)[(0, 0)], 2.0 * e, epsilon = 1e-15);
        assert_abs_diff_eq!(s.eval(0)[(1, 1)], 0.5 * e, epsilon = 1e-15);
        assert_abs_diff_eq!(s.norm_bound, 2.0 * e, epsilon = 1e-15);
    }

    #[test]
    fn transform_examples() {
        let diag = load_system(&SystemSpec::diagonal(
            vec![ScalarPattern::Constant(2.0), ScalarPattern::Constant(0.5)],
            10,
        ))
        .unwrap();
        let same = transform(&diag, &TransformSequence::identity(2)).unwrap();
        assert_eq!(same.eval(3), diag.eval(3));

        let perm = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let swapped = transform(&diag, &TransformSequence::constant(&perm).unwrap()).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]);
        assert!((swapped.eval(0) - expect).abs().max() < 1e-15);

        let three = load_system(&SystemSpec::constant(3, &[1.0; 9], 1));
        assert!(three.is_err());
        let id3 = TransformSequence::identity(3);
        assert!(matches!(
            transform(&diag, &id3),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rotation_transform_removes_rotation() {
        let theta = 0.7;
        let r = 1.5;
        let a = linalg::rotation(theta) * r;
        let seq = load_system(&SystemSpec::constant(
            2,
            &[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]],
            101,
        ))
        .unwrap();
        let t = TransformSequence::from_fn(2, 102, move |n| linalg::rotation(n as f64 * theta)).unwrap();
        let b = transform(&seq, &t).unwrap();
        for n in 0..=100 {
            // direct oracle: T(n+1)ᵀ A T(n)
            let direct = linalg::rotation((n + 1) as f64 * theta).transpose()
                * &a
                * linalg::rotation(n as f64 * theta);
            assert!((direct - Matrix::identity(2, 2) * r).abs().max() < 1e-12);
            assert!((b.eval(n) - Matrix::identity(2, 2) * r).abs().max() < 1e-12);
        }
    }

    #[test]
    fn dyadic_generator_matches_formula() {
        let seq = load_system(&SystemSpec::dyadic(1 << 10)).unwrap();
        for n in 0..(1usize << 10) {
            let k = ((n + 1) as f64).log2().floor() as i64;
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(scalar(&seq, n), f64::exp(s), "n = {n}");
        }
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mats = vec![
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 0.5]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        ];
        std::fs::write(&path, matrices_to_json(&mats)).unwrap();
        let seq = load_system(&SystemSpec::file(2, &path, 2)).unwrap();
        assert_eq!(seq.eval(1), mats[1]);
        assert_eq!(seq.defined_len(), Some(2));
        assert!(seq.tabulate(3).is_err());

        std::fs::write(&path, "[[1, 2, 3]]").unwrap();
        assert!(matches!(
            load_system(&SystemSpec::file(2, &path, 1)),
            Err(Error::MatrixFile { .. })
        ));
        let missing = dir.path().join("nope.json");
        assert!(matches!(
            load_system(&SystemSpec::file(2, &missing, 1)),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SystemSpec::random_qdq(3, 42, 0.5, 2.0, 1000);
        let text = spec.to_json();
        assert!(text.contains("\"random_qdq\""));
        assert_eq!(SystemSpec::from_json(&text).unwrap(), spec);
    }
}
