//! Geometric integrators for mechanical systems with linear velocity
//! constraints: symplectic Hamiltonian schemes, discrete vakonomic and
//! nonholonomic steps, and tools comparing the two dynamics.

pub mod catalog;
pub mod compare;
pub mod continuous;
pub mod dense;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod exprs;
pub mod hamiltonian;
pub mod linsys;
pub mod martinet;
pub mod scalar;
pub mod state;

pub use catalog::CatalogSystem;
pub use dense::Mat;
pub use discrete::{Discretization, NewtonConfig, Scheme};
pub use error::{Error, NewtonError, Result};
pub use exprs::{parse_expr, Expr};
pub use hamiltonian::HamiltonianSystem;
pub use linsys::LinearConstraintSystem;
pub use martinet::MartinetSystem;
pub use scalar::{Dual, Scalar};
pub use state::{IndexSplit, PhaseState, TangentState, Trajectory, VakonomicState};

pub type Dual64 = Dual<f64>;
pub type Dual32 = Dual<f32>;
/// Second-order forward duals, used for exact Newton Jacobians.
pub type HyperDual64 = Dual<Dual<f64>>;
pub type Mat64 = Mat<f64>;
pub type Mat32 = Mat<f32>;
pub type PhaseState64 = PhaseState<f64>;
pub type PhaseState32 = PhaseState<f32>;
pub type TangentState64 = TangentState<f64>;
pub type VakonomicState64 = VakonomicState<f64>;
