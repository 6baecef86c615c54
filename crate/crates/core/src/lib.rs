//! Worst-case (minimax) optimal control of parameter ensembles.
//!
//! The crate discretizes an uncertain parameter set into a finite net,
//! integrates every ensemble member under a shared piecewise-constant
//! control, and minimizes the worst terminal cost plus a Tikhonov term with
//! an iterative maximum principle applied to the current worst member.
//!
//! Module map:
//!
//! - [`ensemble`]: time grids, controls, parameter sets, the
//!   [`EnsembleProblem`](ensemble::EnsembleProblem) trait and RK4 forward
//!   integration.
//! - [`cost`]: terminal/running costs and the minimax and averaged
//!   functionals.
//! - [`adjoint`]: discrete adjoints, Gateaux gradients, the augmented
//!   Hamiltonian update and multiplier-based optimality diagnostics.
//! - [`qubit`]: the two-level system with uncertain detuning, propagated
//!   with exact 2x2 exponentials.
//! - [`model`]: the cost/sensitivity interface the optimizers consume.
//! - [`solver`]: the averaged warm start and the worst-case iteration.
//! - [`gamma`]: uniform nets, Hausdorff distances and refinement sweeps.
//! - [`problems`]: built-in smooth test problems.

pub mod adjoint;
pub mod cost;
pub mod ensemble;
mod error;
pub mod gamma;
pub mod model;
pub mod problems;
pub mod qubit;
pub mod solver;

pub use error::{Error, Result};
