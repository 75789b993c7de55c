//! Construction-free, matrix-free MPC for ARX input-output models.
//!
//! The solver in [`solver`] consumes ARX coefficients directly: it runs an
//! accelerated augmented-Lagrangian loop whose subproblems are solved by
//! cyclic coordinate descent, with no QP matrices formed online. The
//! [`qp`] module builds the equivalent sparse QP explicitly and solves it by
//! independent methods; it exists to check the solver and to measure what
//! explicit construction costs. [`sim`] runs receding-horizon closed loops.

pub mod arx;
pub mod cli;
pub mod error;
pub mod problem;
pub mod qp;
pub mod sim;
mod serde_util;
pub mod solver;

pub use arx::{ArxHistory, ArxModel, LpvArxSpec, ReluNetwork, TimeVaryingArxSpec};
pub use error::{Error, Result};
pub use problem::{DualPoint, MpcProblem, MpcSettings, PrimalPoint};
pub use solver::{solve, SolveReport, SolveStatus, SolverConfig};
