//! Coordinate-descent augmented-Lagrangian solver working directly on the
//! ARX coefficients.
//!
//! The outer loop is an accelerated scaled ALM on the two equality families;
//! each subproblem is a box-constrained QP solved by cyclic coordinate
//! descent over the blocks `y_t, u_(t-1), du_(t-1)` for `t = 1..T`. No QP
//! matrix is ever formed on the coupled path: coordinate gradients are read
//! from working duals that track `accelerated dual + current residual`.

mod alm;
mod cache;
mod ccd;
mod offsets;
mod pass;

pub use alm::{accelerate, default_warm_start, dual_update, next_alpha, solve, solve_from_state};
pub use cache::{precompute_diagonals, BlockHessians, DiagCache};
pub use ccd::ccd_block;
pub use offsets::{compute_offsets, Offsets};
pub use pass::{cd_pass_coupled, cd_pass_naive};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{residuals, DualPoint, MpcProblem, PrimalPoint};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    #[serde(rename = "N_out")]
    pub n_out: usize,
    #[serde(rename = "N_in")]
    pub n_in: usize,
    pub eps_out: f64,
    pub eps_in: f64,
    #[serde(default = "default_true")]
    pub use_coupled: bool,
    #[serde(default = "default_true")]
    pub use_acceleration: bool,
    /// Extrapolate the increment duals like the ARX duals.
    #[serde(default = "default_true")]
    pub accelerate_gamma: bool,
    /// Add `|Gamma^k - Gamma_acc|^2` to the outer stopping test.
    #[serde(default)]
    pub stop_on_gamma: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            n_out: 5000,
            n_in: 100,
            eps_out: 1e-6,
            eps_in: 1e-6,
            use_coupled: true,
            use_acceleration: true,
            accelerate_gamma: true,
            stop_on_gamma: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::NonPositiveRho(self.rho));
        }
        if self.n_in == 0 {
            return Err(Error::InvalidConfig("N_in must be at least 1".into()));
        }
        if !(self.eps_out >= 0.0) || !(self.eps_in >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solution: PrimalPoint,
    pub duals: DualPoint,
    pub outer_iters: usize,
    pub total_inner_passes: usize,
    /// Final `|Lambda^k - Lambda_acc^(k-1)|^2`; infinite when no outer
    /// iteration ran.
    pub outer_residual: f64,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Primal iterate, working duals and the accelerated dual sequence.
///
/// Between coordinate updates `lam_tilde == lam_acc + res_arx(z)` and
/// `gam_tilde == gam_acc + res_du(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z: PrimalPoint,
    pub lam_tilde: Vec<DVector<f64>>,
    pub gam_tilde: Vec<DVector<f64>>,
    /// `Lambda^(k-1)`
    pub lam_prev: Vec<DVector<f64>>,
    /// `Lambda_acc^(k-1)`, the multiplier of the current subproblem.
    pub lam_acc: Vec<DVector<f64>>,
    pub gam_prev: Vec<DVector<f64>>,
    pub gam_acc: Vec<DVector<f64>>,
    pub alpha: f64,
    /// Squared coordinate movement of the last pass.
    pub sigma: f64,
    pub k_out: usize,
    pub k_in: usize,
}

impl SolverState {
    /// Starts from `z` with `Lambda^(-1) = Lambda^0 = Lambda_acc^0 = duals`
    /// and synchronized working duals.
    pub fn new(p: &MpcProblem, z: PrimalPoint, duals: DualPoint) -> Result<Self> {
        p.check_primal(&z)?;
        p.check_dual(&duals)?;
        let res = residuals(p, &z)?;
        let lam_tilde = duals.lambda.iter().zip(&res.arx).map(|(l, r)| l + r).collect();
        let gam_tilde = duals.gamma.iter().zip(&res.du).map(|(g, r)| g + r).collect();
        Ok(Self {
            z,
            lam_tilde,
            gam_tilde,
            lam_prev: duals.lambda.clone(),
            lam_acc: duals.lambda,
            gam_prev: duals.gamma.clone(),
            gam_acc: duals.gamma,
            alpha: 1.0,
            sigma: 0.0,
            k_out: 0,
            k_in: 0,
        })
    }

    pub fn accelerated_duals(&self) -> DualPoint {
        DualPoint {
            lambda: self.lam_acc.clone(),
            gamma: self.gam_acc.clone(),
        }
    }

    pub fn working_duals(&self) -> DualPoint {
        DualPoint {
            lambda: self.lam_tilde.clone(),
            gamma: self.gam_tilde.clone(),
        }
    }
}
