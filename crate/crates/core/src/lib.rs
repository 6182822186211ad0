//! Synthesis and verification of adiabatic controls that climb through
//! conical eigenvalue intersections of `H(u) = H0 + u1 H1 + u2 H2`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod spectral;
pub mod tolerances;
pub mod spline;
pub mod ode;
pub mod conical;
pub mod nonmixing;
pub mod planner;
pub mod propagate;
pub mod experiment;
pub mod acceptance;

pub use model::{ControlPoint, OperatorTriple};
pub use tolerances::Tolerances;
