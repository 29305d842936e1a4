//! Numerical machinery for nonholonomic mechanical systems with a symmetry
//! group presented in an adapted frame.
//!
//! Given a system description (kinetic metric, constraint coframe, adapted
//! frame fields, shape chart) the crate can
//!
//! * verify the sufficient conditions under which the system carries a full
//!   set of conserved momenta linear in the fiber variables ([`checks`]),
//! * construct those momenta by solving a linear ODE system along the shape
//!   coordinate ([`momentum`]),
//! * integrate the constrained equations of motion with conservation
//!   diagnostics ([`dynamics`]) and transport momentum coefficients along
//!   trajectories ([`connection`]),
//! * assemble the gauge 2-form and the rank-2 reduced Poisson bivector with
//!   numerical Casimir/Jacobi certification ([`hamiltonization`]).
//!
//! [`catalog`] ships ready-made benchmark systems with closed-form reference
//! quantities used by the regression and acceptance suites.

pub mod catalog;
pub mod checks;
pub mod connection;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod hamiltonization;
pub mod linalg;
pub mod momentum;
pub mod sampling;
pub mod system;

pub use error::{Error, Result};
pub use geometry::{ChartPoint, KineticMetric, OneForm, ScalarField, VectorField};
pub use system::SystemSpec;

/// Default relative step for all central finite differences.
pub const DEFAULT_FD_EPS: f64 = 1e-6;
