//! Terminal and running costs, and the minimax / averaged functionals.

use std::fmt;
use std::sync::Arc;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::ensemble::{Control, ParamPoint, ParamSet, TrajectoryBundle};
use crate::model::{check_cost, EnsembleModel};
use crate::{Error, Result};

/// Terminal cost `a(x, θ) ≥ 0` with its state gradient.
pub trait TerminalCost: Sync {
    fn value(&self, x: &[f64], theta: &ParamPoint) -> f64;
    fn gradient(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]);
}

/// `a ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl TerminalCost for ZeroCost {
    fn value(&self, _: &[f64], _: &ParamPoint) -> f64 {
        0.0
    }
    fn gradient(&self, _: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `a(x) = |x|₂²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredNorm;

impl TerminalCost for SquaredNorm {
    fn value(&self, x: &[f64], _: &ParamPoint) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v);
    }
}

/// A convex running-cost density `f(t, v)` with an optional gradient.
pub trait ConvexDensity: Send + Sync {
    fn value(&self, t: f64, v: &[f64]) -> f64;
    /// `∂_v f(t, v)`, or `None` where `f` is not differentiable.
    fn gradient(&self, t: f64, v: &[f64]) -> Option<Vec<f64>>;
    /// Growth exponent `p` in `f(t, v) ≥ C|v|^p − c(t)`.
    fn growth_exponent(&self) -> f64;
}

/// Running cost `∫_0^T f(t, u(t)) dt`.
#[derive(Clone)]
pub enum RunningCost {
    /// `f(t, v) = γ|v|₂²`, so the integral is `γ‖u‖²_{L²}`.
    Quadratic {
        gamma: f64,
    },
    Convex(Arc<dyn ConvexDensity>),
}

impl fmt::Debug for RunningCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunningCost::Quadratic { gamma } => write!(f, "Quadratic {{ gamma: {gamma} }}"),
            RunningCost::Convex(_) => write!(f, "Convex(..)"),
        }
    }
}

impl RunningCost {
    pub fn quadratic(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!(
                "running-cost weight must be positive, got {gamma}"
            )));
        }
        Ok(RunningCost::Quadratic { gamma })
    }

    pub fn exponent(&self) -> f64 {
        match self {
            RunningCost::Quadratic { .. } => 2.0,
            RunningCost::Convex(d) => d.growth_exponent(),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            RunningCost::Quadratic { gamma } => Some(*gamma),
            RunningCost::Convex(_) => None,
        }
    }

    /// Cell-wise integral; exact for the quadratic kind, midpoint in time
    /// for a general density.
    pub fn integral(&self, u: &Control) -> f64 {
        match self {
            RunningCost::Quadratic { gamma } => gamma * u.l2_norm_sq(),
            RunningCost::Convex(d) => {
                let grid = u.grid();
                (0..grid.cells())
                    .map(|m| {
                        d.value(
                            grid.cell_midpoint(m),
                            u.cell(m).as_slice().expect("contiguous"),
                        )
                    })
                    .sum::<f64>()
                    * grid.dt()
            }
        }
    }

    /// `∂_v f(t, v)`; `cell` is only used to label errors.
    pub fn gradient_density(
        &self,
        t: f64,
        v: ArrayView1<'_, f64>,
        cell: usize,
    ) -> Result<Vec<f64>> {
        match self {
            RunningCost::Quadratic { gamma } => Ok(v.iter().map(|x| 2.0 * gamma * x).collect()),
            RunningCost::Convex(d) => d
                .gradient(t, v.as_slice().expect("contiguous"))
                .ok_or(Error::NonsmoothCost { cell }),
        }
    }

    /// Spot-checks midpoint convexity `f(t, (v+w)/2) ≤ (f(t,v) + f(t,w))/2`
    /// on the supplied samples.
    pub fn midpoint_convex_on(&self, samples: &[(f64, Vec<f64>, Vec<f64>)]) -> bool {
        let RunningCost::Convex(d) = self else {
            return true;
        };
        samples.iter().all(|(t, v, w)| {
            let mid: Vec<f64> = v.iter().zip(w).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = d.value(*t, &mid);
            let rhs = 0.5 * (d.value(*t, v) + d.value(*t, w));
            lhs <= rhs + 1e-12 * rhs.abs().max(1.0)
        })
    }
}

/// Worst ensemble member for a given control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    pub index: usize,
    pub theta: ParamPoint,
    pub value: f64,
}

/// `a(X(T, θ_j), θ_j)` for every member of the bundle.
pub fn terminal_costs<A: TerminalCost + ?Sized>(
    bundle: &TrajectoryBundle,
    a: &A,
) -> Result<Vec<f64>> {
    (0..bundle.params().len())
        .map(|j| {
            let x = bundle.terminal_state(j).to_vec();
            check_cost(a.value(&x, bundle.params().get(j)), j)
        })
        .collect()
}

/// Maximum cost with smallest-index tie-break.
pub fn worst_case(costs: &[f64], params: &ParamSet) -> Result<WorstCase> {
    if costs.is_empty() || costs.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} costs for {} parameter points",
            costs.len(),
            params.len()
        )));
    }
    let index = argmax_first(costs);
    Ok(WorstCase {
        index,
        theta: params.get(index).clone(),
        value: costs[index],
    })
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// `J^N(u) = max_j a(X(T, θ_j), θ_j) + ∫ f`.
pub fn eval_minimax<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    f: &RunningCost,
) -> Result<f64> {
    let costs = model.terminal_costs(params, u)?;
    Ok(worst_case(&costs, params)?.value + f.integral(u))
}

/// `J^av(u) = (1/N) Σ_j a(X(T, θ_j), θ_j) + ∫ f`.
pub fn eval_averaged<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    f: &RunningCost,
) -> Result<f64> {
    let costs = model.terminal_costs(params, u)?;
    Ok(mean(&costs) + f.integral(u))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
