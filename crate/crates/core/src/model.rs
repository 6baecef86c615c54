//! The interface the optimizers consume.
//!
//! An [`EnsembleModel`] knows how to evaluate the terminal cost of one
//! ensemble member under a control and how to compute that member's
//! cell-wise coupling `b_m`, the exact sensitivity
//! `b_m = −(1/dt)·∂a(X(T, θ), θ)/∂u_m` of the discretized dynamics. In
//! maximum-principle terms `b_m` is the cell average of `Λ(t)·F(X(t), θ)`.

use ndarray::Array2;
use rayon::prelude::*;

use crate::adjoint::simulate_adjoint_path;
use crate::cost::TerminalCost;
use crate::ensemble::{
    simulate_trajectory_with, Control, EnsembleProblem, Integrator, ParamPoint, ParamSet,
};
use crate::{Error, Result};

/// Terminal cost and coupling of a single member.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub cost: f64,
    /// `M × k` cell couplings.
    pub coupling: Array2<f64>,
}

pub trait EnsembleModel: Sync {
    fn control_dim(&self) -> usize;

    /// `a(X_u(T, θ), θ)`; must be non-negative.
    fn terminal_cost(&self, theta: &ParamPoint, u: &Control) -> Result<f64>;

    fn sensitivity(&self, theta: &ParamPoint, u: &Control) -> Result<Sensitivity>;

    /// Secondary reporting metric derived from a terminal cost (the qubit
    /// reports infidelity `1 − |overlap|` next to `1 − |overlap|²`).
    fn report_metric(&self, cost: f64) -> f64 {
        cost
    }

    /// Terminal costs over a parameter set, in set order.
    fn terminal_costs(&self, params: &ParamSet, u: &Control) -> Result<Vec<f64>> {
        params
            .points()
            .par_iter()
            .enumerate()
            .map(|(j, theta)| {
                let c = self.terminal_cost(theta, u).map_err(|e| e.with_theta(j))?;
                check_cost(c, j)
            })
            .collect()
    }

    fn sensitivities(&self, params: &ParamSet, u: &Control) -> Result<Vec<Sensitivity>> {
        params
            .points()
            .par_iter()
            .enumerate()
            .map(|(j, theta)| {
                let s = self.sensitivity(theta, u).map_err(|e| e.with_theta(j))?;
                check_cost(s.cost, j)?;
                Ok(s)
            })
            .collect()
    }
}

pub(crate) fn check_cost(c: f64, j: usize) -> Result<f64> {
    if c.is_nan() || c < 0.0 {
        return Err(Error::ContractViolation(format!(
            "terminal cost {c} at parameter #{j} is not a non-negative number"
        )));
    }
    Ok(c)
}

/// A generic [`EnsembleProblem`] paired with a [`TerminalCost`], integrated
/// with RK4 and differentiated with the exact discrete adjoint.
pub struct SmoothModel<'a, P: ?Sized, A: ?Sized> {
    pub problem: &'a P,
    pub cost: &'a A,
    pub integrator: Integrator,
}

impl<'a, P: EnsembleProblem + ?Sized, A: TerminalCost + ?Sized> SmoothModel<'a, P, A> {
    pub fn new(problem: &'a P, cost: &'a A) -> Self {
        Self {
            problem,
            cost,
            integrator: Integrator::default(),
        }
    }
}

impl<P: EnsembleProblem + ?Sized, A: TerminalCost + ?Sized> EnsembleModel
    for SmoothModel<'_, P, A>
{
    fn control_dim(&self) -> usize {
        self.problem.control_dim()
    }

    fn terminal_cost(&self, theta: &ParamPoint, u: &Control) -> Result<f64> {
        let path = simulate_trajectory_with(self.problem, theta, u, self.integrator)?;
        let x_t = path.row(path.nrows() - 1);
        Ok(self
            .cost
            .value(x_t.as_slice().expect("row-major path"), theta))
    }

    fn sensitivity(&self, theta: &ParamPoint, u: &Control) -> Result<Sensitivity> {
        let path = simulate_trajectory_with(self.problem, theta, u, self.integrator)?;
        let x_t = path.row(path.nrows() - 1);
        let cost = self
            .cost
            .value(x_t.as_slice().expect("row-major path"), theta);
        let adj = simulate_adjoint_path(
            self.problem,
            theta,
            u,
            path.view(),
            self.cost,
            self.integrator,
        )?;
        Ok(Sensitivity {
            cost,
            coupling: adj.coupling,
        })
    }
}
