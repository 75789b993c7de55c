//! Explicit QP form of the MPC problem and reference solvers for it.

mod admm;
mod brute;
mod build;
mod kkt;

pub use admm::{reference_solve, reference_solve_with, AdmmSettings, ReferenceSolution};
pub use brute::{brute_force_active_set, BRUTE_FORCE_LIMIT};
pub use build::{build_sparse_qp, QpLayout, QpTriplets, SparseQp};
pub use kkt::{equality_rank, kkt_equality_solve};
