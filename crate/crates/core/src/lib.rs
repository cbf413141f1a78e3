//! Weighted Birkhoff averages of irrational rotations on finite and truncated
//! infinite tori, computed in extended precision.
//!
//! The crate is organised bottom-up:
//!
//! * [`numeric`] and [`quad`]: extended-precision scalars and quadrature;
//! * [`weights`]: bump weights, their normalisation and derivative tables;
//! * [`lattice`]: integer frequency vectors and ball enumeration;
//! * [`rotations`]: rotation vectors, approximation functions, small divisors;
//! * [`observables`]: Fourier-defined test functions with known means;
//! * [`engine`]: orbit averages, the kernel `S_N` and the Fourier-side oracle;
//! * [`analysis`]: hypothesis checks, rate fits and error budgets.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod numeric;
pub mod observables;
pub mod quad;
pub mod rotations;
pub mod weights;

pub use error::{NumericError, Result};
pub use numeric::{ExtComplex, ExtReal, Precision};
