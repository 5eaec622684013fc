//! Periodic solutions of parametrized semi-explicit index-1 DAEs whose algebraic
//! constraint moves through time-periodic orthogonal frames,
//! `x' = lambda f(t, x, y)`, `g(A(t) x, B(t) y) = 0`, and the second-order analogue.
//!
//! * [`densela`]: dense linear algebra, Newton, SVD, quadrature, RK4
//! * [`matpath`]: periodic matrix paths and frame audits
//! * [`transform`]: problem model and the fixed-frame change of variables
//! * [`slred`]: SVD reduction of semi-linear DAEs
//! * [`degree`]: Brouwer degree of the branch-seeding maps
//! * [`periodic`]: integration, shooting and branch continuation
//! * [`probfile`]: problem files, expression DSL, CSV/JSON output
//! * [`fixtures`]: built-in example problems

pub mod degree;
pub mod densela;
pub mod error;
pub mod fixtures;
pub mod matpath;
pub mod periodic;
pub mod probfile;
pub mod slred;
pub mod transform;

pub use error::{Error, Result};
