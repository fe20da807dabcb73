//! Numerical laboratory for the discrete membrane (Bilaplacian) model with
//! δ-pinning.

pub mod decay;
pub mod error;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod operator;
pub mod percolation;
pub mod pinning;
pub mod rng;
pub mod scalar;
pub mod sobolev;

pub use error::{Error, Result};

pub use scalar::{Real, Scalar};

/// Exact rational scalar for stencil and small-system checks.
pub type Rational = num_rational::Ratio<i64>;

pub type Field = operator::LatticeField<f64>;
pub type Field32 = operator::LatticeField<f32>;
pub type ExactField = operator::LatticeField<Rational>;
pub type Bilaplacian = operator::RestrictedBilaplacian<f64>;
pub type ExactBilaplacian = operator::RestrictedBilaplacian<Rational>;
pub type Solver = green::GreenSolver<f64>;
pub type Solver32 = green::GreenSolver<f32>;
pub type Norms = sobolev::NormReport<f64>;
