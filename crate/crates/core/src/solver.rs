//! Averaged warm start and the worst-case iterative maximum principle.
//!
//! Each worst-case iteration simulates every member, picks the worst one
//! (smallest index on ties), computes that member's coupling `b` with one
//! backward pass and replaces every cell value by the maximizer of the
//! augmented Hamiltonian `b·v − γ|v|² − (τ/2)|v − u_m|²`. The proximal
//! weight grows as `τ_n = τ₀ + n`, so the effective step `1/τ_n` vanishes
//! while its sum diverges.

use serde::Serialize;

use crate::adjoint::{default_activation_tol, pmp_check, PmpReport};
use crate::cost::{mean, worst_case, RunningCost, WorstCase};
use crate::ensemble::{Control, ParamSet};
use crate::model::EnsembleModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Tikhonov weight `γ` of the running cost `γ|v|²`.
    pub gamma: f64,
    /// Initial proximal weight `τ₀` of the worst-case iteration.
    pub tau0: f64,
    pub max_iter: usize,
    pub warmstart_iter: usize,
    /// Fixed proximal weight of the averaged warm start.
    pub warmstart_tau: f64,
    /// Run the multiplier diagnostic on the returned control.
    pub pmp: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("tau0", self.tau0),
            ("warmstart_tau", self.warmstart_tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn running_cost(&self) -> Result<RunningCost> {
        RunningCost::quadratic(self.gamma)
    }

    /// Proximal weight used by iteration `n` (1-based).
    pub fn tau_at(&self, n: usize) -> f64 {
        self.tau0 + (n - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub worst_index: usize,
    /// First coordinate of the worst parameter.
    pub worst_theta: f64,
    pub worst_cost: f64,
    /// [`EnsembleModel::report_metric`] of the worst cost.
    pub worst_metric: f64,
    pub l2_sq: f64,
    /// `J^N` of the control entering this iteration.
    pub objective: f64,
    pub best_objective: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Costs of one control over one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetEvaluation {
    pub costs: Vec<f64>,
    pub metrics: Vec<f64>,
    pub worst: WorstCase,
    pub worst_metric: f64,
    pub best_metric: f64,
}

impl NetEvaluation {
    pub fn new<M: EnsembleModel + ?Sized>(
        model: &M,
        params: &ParamSet,
        u: &Control,
    ) -> Result<Self> {
        let costs = model.terminal_costs(params, u)?;
        let worst = worst_case(&costs, params)?;
        let metrics: Vec<f64> = costs.iter().map(|&c| model.report_metric(c)).collect();
        let worst_metric = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best_metric = metrics.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            costs,
            metrics,
            worst,
            worst_metric,
            best_metric,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// Iterate with the smallest `J^N` seen (ties keep the earliest).
    #[serde(skip)]
    pub control: Control,
    #[serde(skip)]
    pub last_control: Control,
    pub best_iteration: usize,
    pub objective: f64,
    pub l2_sq: f64,
    pub trace: IterationTrace,
    pub optimization_net: NetEvaluation,
    pub test_net: Option<NetEvaluation>,
    pub pmp: Option<PmpReport>,
}

/// Proximal update of every cell towards the maximizer of
/// `b·v − γ|v|² − (τ/2)|v − u_m|²`.
fn prox_update(u: &mut Control, coupling: &ndarray::Array2<f64>, gamma: f64, tau: f64) {
    let denom = 2.0 * gamma + tau;
    u.values_mut()
        .zip_mut_with(coupling, |v, &b| *v = (b + tau * *v) / denom);
}

fn check_grid(u: &Control, k: usize) -> Result<()> {
    if u.channels() != k {
        return Err(Error::Dimension(format!(
            "control has {} channels, model expects {k}",
            u.channels()
        )));
    }
    Ok(())
}

/// Warm start on the averaged functional: every iteration moves each cell
/// to the maximizer of the averaged augmented Hamiltonian with fixed
/// `τ = warmstart_tau`.
pub fn solve_averaged<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    config: &SolverConfig,
    initial: Control,
) -> Result<Control> {
    config.validate()?;
    check_grid(&initial, model.control_dim())?;
    let mut u = initial;
    for _ in 0..config.warmstart_iter {
        let sens = model.sensitivities(params, &u)?;
        let mut avg = ndarray::Array2::zeros(u.values().raw_dim());
        for s in &sens {
            avg += &s.coupling;
        }
        avg /= sens.len() as f64;
        prox_update(&mut u, &avg, config.gamma, config.warmstart_tau);
    }
    Ok(u)
}

/// Worst-case iteration started from `warm_start`; optionally evaluates the
/// returned control on a separate test net.
pub fn solve_minimax<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    config: &SolverConfig,
    warm_start: Control,
    test_net: Option<&ParamSet>,
) -> Result<SolveReport> {
    config.validate()?;
    check_grid(&warm_start, model.control_dim())?;
    let gamma = config.gamma;
    let mut u = warm_start;
    let mut best: Option<(Control, f64, usize)> = None;
    let mut trace = IterationTrace::default();
    let mut tau = config.tau0;

    let consider =
        |u: &Control, objective: f64, iter: usize, best: &mut Option<(Control, f64, usize)>| {
            if best.as_ref().is_none_or(|(_, j, _)| objective < *j) {
                *best = Some((u.clone(), objective, iter));
            }
            best.as_ref().map(|b| b.1).unwrap_or(objective)
        };

    for n in 1..=config.max_iter {
        let costs = model.terminal_costs(params, &u)?;
        let worst = worst_case(&costs, params)?;
        let l2_sq = u.l2_norm_sq();
        let objective = worst.value + gamma * l2_sq;
        let best_objective = consider(&u, objective, n - 1, &mut best);
        trace.records.push(IterationRecord {
            iter: n,
            worst_index: worst.index,
            worst_theta: worst.theta.first(),
            worst_cost: worst.value,
            worst_metric: model.report_metric(worst.value),
            l2_sq,
            objective,
            best_objective,
            tau,
        });

        let sens = model
            .sensitivity(&worst.theta, &u)
            .map_err(|e| e.with_theta(worst.index))?;
        prox_update(&mut u, &sens.coupling, gamma, tau);
        tau = config.tau0 + n as f64;
    }

    let final_costs = model.terminal_costs(params, &u)?;
    let final_objective = worst_case(&final_costs, params)?.value + gamma * u.l2_norm_sq();
    consider(&u, final_objective, config.max_iter, &mut best);
    let (control, objective, best_iteration) = best.expect("final iterate always considered");

    let optimization_net = NetEvaluation::new(model, params, &control)?;
    let test_net = test_net
        .map(|net| NetEvaluation::new(model, net, &control))
        .transpose()?;
    let pmp = if config.pmp {
        let f = config.running_cost()?;
        let tol = default_activation_tol(&optimization_net.costs);
        Some(pmp_check(model, params, &control, &f, tol)?)
    } else {
        None
    };
    Ok(SolveReport {
        l2_sq: control.l2_norm_sq(),
        control,
        last_control: u,
        best_iteration,
        objective,
        trace,
        optimization_net,
        test_net,
        pmp,
    })
}

/// Averaged value `(1/N) Σ_j a_j + γ‖u‖²` of a control.
pub fn averaged_objective<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    gamma: f64,
) -> Result<f64> {
    Ok(mean(&model.terminal_costs(params, u)?) + gamma * u.l2_norm_sq())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::aug_hamiltonian;
    use crate::cost::ZeroCost;
    use crate::ensemble::TimeGrid;
    use crate::model::SmoothModel;
    use crate::problems::{Pendulum, PendulumEnergy};
    use crate::qubit::{QubitEnsembleSpec, QubitModel};
    use ndarray::Array2;

    fn config() -> SolverConfig {
        SolverConfig {
            gamma: 1.0 / 16.0,
            tau0: 8.0,
            max_iter: 5,
            warmstart_iter: 3,
            warmstart_tau: 4.0,
            pmp: false,
        }
    }

    fn ramp(grid: TimeGrid) -> Control {
        Control::new(
            grid,
            Array2::from_shape_fn((grid.cells(), 1), |(m, _)| (m as f64 * 0.1).sin()),
        )
        .unwrap()
    }

    #[test]
    fn zero_warmstart_iterations_return_initial() {
        let grid = TimeGrid::new(1.0, 1.0 / 32.0).unwrap();
        let model = QubitModel::new(QubitEnsembleSpec::new(1.0, -0.5, 0.5).unwrap());
        let params = ParamSet::from_scalars(&[0.0, 0.1]).unwrap();
        let cfg = SolverConfig {
            warmstart_iter: 0,
            ..config()
        };
        let u0 = ramp(grid);
        assert_eq!(
            solve_averaged(&model, &params, &cfg, u0.clone()).unwrap(),
            u0
        );
    }

    #[test]
    fn zero_terminal_cost_contracts_towards_zero() {
        let grid = TimeGrid::new(1.0, 1.0 / 32.0).unwrap();
        let problem = Pendulum::default();
        let model = SmoothModel::new(&problem, &ZeroCost);
        let params = ParamSet::from_scalars(&[1.0]).unwrap();
        let cfg = SolverConfig {
            warmstart_iter: 1,
            ..config()
        };
        let u0 = ramp(grid);
        let u1 = solve_averaged(&model, &params, &cfg, u0.clone()).unwrap();
        let factor = cfg.warmstart_tau / (2.0 * cfg.gamma + cfg.warmstart_tau);
        for (a, b) in u0.values().iter().zip(u1.values()) {
            assert!((b - factor * a).abs() < 1e-15);
        }
        assert!(u1.l2_norm_sq() < u0.l2_norm_sq());
    }

    #[test]
    fn qubit_zero_control_is_a_critical_point() {
        let grid = TimeGrid::new(5.0, 1.0 / 32.0).unwrap();
        let model = QubitModel::new(QubitEnsembleSpec::new(1.0, -0.5, 0.5).unwrap());
        let params = ParamSet::from_scalars(&[-0.5, 0.0, 0.5]).unwrap();
        let cfg = SolverConfig {
            max_iter: 1,
            ..config()
        };
        let report = solve_minimax(&model, &params, &cfg, Control::zeros(grid, 1), None).unwrap();
        assert!(report.last_control.values().iter().all(|v| *v == 0.0));
        assert_eq!(report.trace.records[0].worst_cost, 1.0);
        assert_eq!(report.trace.records[0].worst_index, 0);
        assert_eq!(report.objective, 1.0);
    }

    #[test]
    fn tau_schedule_and_best_iterate() {
        let grid = TimeGrid::new(2.0, 1.0 / 32.0).unwrap();
        let problem = Pendulum::default();
        let model = SmoothModel::new(&problem, &PendulumEnergy);
        let params = ParamSet::from_scalars(&[0.5, 1.0, 1.5]).unwrap();
        let cfg = SolverConfig {
            max_iter: 12,
            ..config()
        };
        let report = solve_minimax(&model, &params, &cfg, ramp(grid), None).unwrap();
        assert_eq!(report.trace.len(), 12);
        for (i, r) in report.trace.records.iter().enumerate() {
            assert_eq!(r.tau, cfg.tau0 + i as f64);
            assert_eq!(r.tau, cfg.tau_at(i + 1));
        }
        let best: Vec<f64> = report
            .trace
            .records
            .iter()
            .map(|r| r.best_objective)
            .collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        let min_seen = report
            .trace
            .records
            .iter()
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        assert!(report.objective <= min_seen);
    }

    #[test]
    fn single_cell_update_increases_augmented_hamiltonian() {
        let gamma = 1.0 / 16.0;
        let tau = 8.0;
        let mut u =
            Control::from_scalar_cells(TimeGrid::with_cells(1.0, 3).unwrap(), vec![0.3, -0.2, 0.1])
                .unwrap();
        let old = u.clone();
        let b = Array2::from_shape_vec((3, 1), vec![0.5, -0.1, 2.0 * gamma * 0.1]).unwrap();
        prox_update(&mut u, &b, gamma, tau);
        for m in 0..3 {
            let bm = [b[[m, 0]]];
            let prev = [old.values()[[m, 0]]];
            let new = [u.values()[[m, 0]]];
            let before = aug_hamiltonian(&bm, &prev, gamma, tau, &prev);
            let after = aug_hamiltonian(&bm, &prev, gamma, tau, &new);
            if m == 2 {
                assert!((new[0] - prev[0]).abs() < 1e-15);
            } else {
                assert!(after > before);
            }
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let grid = TimeGrid::new(3.0, 1.0 / 32.0).unwrap();
        let model = QubitModel::new(QubitEnsembleSpec::new(1.0, -0.5, 0.5).unwrap());
        let params = ParamSet::from_scalars(&[-0.5, -0.25, 0.0, 0.25, 0.5]).unwrap();
        let cfg = config();
        let run = || {
            let ws = solve_averaged(&model, &params, &cfg, ramp(grid)).unwrap();
            solve_minimax(&model, &params, &cfg, ws, Some(&params)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig {
            gamma: 0.0,
            ..config()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            tau0: -1.0,
            ..config()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            warmstart_tau: f64::NAN,
            ..config()
        }
        .validate()
        .is_err());
        assert!(config().validate().is_ok());
    }
}
