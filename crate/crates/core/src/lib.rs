//! Numerical laboratory for nonlinear Dirac operators in Clifford analysis.
//!
//! The crate is layered bottom-up:
//!
//! * [`clifford`]: dense `Cl_n` arithmetic, reversion, conjugation, Pin actions.
//! * [`mobius`]: Vahlen matrices, Jacobian factors, the twisted frame `D_M`.
//! * [`field`]: closed-form fields, finite-difference Dirac operator and
//!   strong-form residuals for the p-Dirac and p-harmonic equations.
//! * [`weak`]: Gauss-Legendre quadrature of weak formulations and the
//!   conformal covariance experiments.
//! * [`complex`]: the two-dimensional p-Cauchy-Riemann equation.
//! * [`sphere`]: the spherical Dirac operator on `S^n`.
//! * [`solver`]: lattice minimization of the p-Dirichlet energy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clifford;
pub mod complex;
pub mod error;
pub mod field;
pub mod mobius;
pub mod quadrature;
pub mod solver;
pub mod sphere;
pub mod weak;

pub use clifford::{Multivector, VectorFactorList};
pub use error::{Error, Result};
pub use field::{AnalyticField, Domain};
pub use mobius::{Generator, VahlenMatrix};
