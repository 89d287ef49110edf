//! Asymptotic integration and dispersive decay for strictly hyperbolic
//! equations with time-dependent coefficients.

pub mod asymint;
pub mod cauchy;
pub mod coeffs;
pub mod error;
pub mod expr;
pub mod fft;
pub mod geometry;
pub mod linalg;
pub mod ode;
pub mod oscillatory;
pub mod quad;
pub mod scalar;
pub mod spectral;
pub mod symbol;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision shorthands.
pub type Operator = symbol::OperatorSpec<f64>;
pub type Roots = symbol::RootField<f64>;
pub type Grid = cauchy::SpectralGrid<f64>;
pub type Data = cauchy::CauchyData<f64>;
