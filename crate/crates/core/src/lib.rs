//! Finite-horizon Bohl, Bohl dichotomy and exponential dichotomy spectra of
//! nonautonomous linear difference equations `x(n+1) = A(n) x(n)`.
//!
//! The crate is organized bottom-up:
//!
//! * [`systems`] builds and validates coefficient sequences,
//! * [`propagation`] computes log-scaled solutions and window growth rates,
//! * [`exponents`] estimates Bohl exponents from window scans,
//! * [`triangularize`] reduces a system to upper triangular normal form,
//! * [`spectra`] assembles the three spectra,
//! * [`theoremcheck`] runs the structural relations between them as
//!   property suites over a roster of systems.

pub mod error;
pub mod exponents;
pub mod linalg;
pub mod propagation;
pub mod spectra;
pub mod systems;
pub mod theoremcheck;
pub mod triangularize;

pub use error::{Error, Result};
pub use exponents::{BohlEstimate, Subject};
pub use propagation::{LogSolution, Representation, WindowConfig};
pub use spectra::{
    Analysis, DichotomyMode, GammaVerdict, Interval, SpectralConfig, SpectrumKind, SpectrumResult,
    Verdict,
};
pub use systems::{
    load_system, MatrixSequence, ScalarPattern, SystemKind, SystemSpec, TransformSequence,
};
pub use triangularize::TriangularForm;
