//! Adjoint equations, Gateaux derivatives and maximum-principle diagnostics.
//!
//! Covectors follow the maximum-principle sign convention: the terminal
//! value is `λ(T) = −∇ₓa(X(T, θ), θ)` and `λ` is propagated backward by the
//! transpose of the forward RK4 step. Using the exact transpose of the
//! discrete step (re-integrating the stage states inside each cell) makes
//! the resulting couplings the exact derivatives of the discretized cost,
//! which is what the finite-difference checks compare against.

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{argmax_first, RunningCost, TerminalCost};
use crate::ensemble::{
    check_control, eval_field, rk4_step, Control, EnsembleProblem, Integrator, ParamPoint,
    ParamSet, Rk4Scratch, TimeGrid, TrajectoryBundle,
};
use crate::model::EnsembleModel;
use crate::{Error, Result};

/// Backward solution for one member.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    /// `(M + 1) × d` row covectors.
    pub covectors: Array2<f64>,
    /// `M × k` couplings `b_m = (1/dt) λ_{m+1}·∂x_{m+1}/∂u_m`.
    pub coupling: Array2<f64>,
}

/// Covectors `Λ_u(t_m, θ_j)` for a whole parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBundle {
    pub grid: TimeGrid,
    pub params: ParamSet,
    /// Shape `(M + 1, |Θ^N|, d)`.
    pub covectors: Array3<f64>,
}

struct AdjointScratch {
    rk: Rk4Scratch,
    stages: [Vec<f64>; 4],
    jac: Vec<f64>,
    jac_tmp: Vec<f64>,
    kbar: [Vec<f64>; 4],
    sbar: Vec<f64>,
    field: Vec<f64>,
}

impl AdjointScratch {
    fn new(d: usize) -> Self {
        Self {
            rk: Rk4Scratch::new(d),
            stages: std::array::from_fn(|_| vec![0.0; d]),
            jac: vec![0.0; d * d],
            jac_tmp: vec![0.0; d * d],
            kbar: std::array::from_fn(|_| vec![0.0; d]),
            sbar: vec![0.0; d],
            field: vec![0.0; d],
        }
    }
}

/// Transposed RK4 step: on entry `lam` is the covector after the step, on
/// exit the covector before it; `ubar` accumulates `λ·∂x⁺/∂u`.
fn rk4_step_adjoint<P: EnsembleProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    theta: &ParamPoint,
    u: ndarray::ArrayView1<'_, f64>,
    h: f64,
    lam: &mut [f64],
    ubar: &mut [f64],
    s: &mut AdjointScratch,
) {
    let d = x.len();
    // stage inputs s_i
    let offsets = [0.0, 0.5 * h, 0.5 * h, h];
    for i in 0..4 {
        let (prev_k, rest_k) = s.rk.k.split_at_mut(i);
        let stage = &mut s.stages[i];
        stage.copy_from_slice(x);
        if i > 0 {
            for (st, kp) in stage.iter_mut().zip(&prev_k[i - 1]) {
                *st += offsets[i] * kp;
            }
        }
        eval_field(problem, stage, theta, u, &mut rest_k[0], &mut s.rk.field);
    }

    let weights = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    for i in 0..4 {
        for (kb, l) in s.kbar[i].iter_mut().zip(lam.iter()) {
            *kb = weights[i] * l;
        }
    }
    // lam keeps accumulating x̄, starting from ȳ
    for i in (0..4).rev() {
        let stage = &s.stages[i];
        problem.drift_jacobian(stage, theta, &mut s.jac);
        for (c, &uc) in u.iter().enumerate() {
            problem.control_field(c, stage, theta, &mut s.field);
            ubar[c] += dot(&s.kbar[i], &s.field);
            if uc != 0.0 {
                problem.control_field_jacobian(c, stage, theta, &mut s.jac_tmp);
                for (j, jt) in s.jac.iter_mut().zip(&s.jac_tmp) {
                    *j += uc * jt;
                }
            }
        }
        // s̄_i = k̄_i · J(s_i)
        s.sbar.fill(0.0);
        for r in 0..d {
            let kr = s.kbar[i][r];
            if kr == 0.0 {
                continue;
            }
            let row = &s.jac[r * d..(r + 1) * d];
            for (sb, j) in s.sbar.iter_mut().zip(row) {
                *sb += kr * j;
            }
        }
        for (l, sb) in lam.iter_mut().zip(&s.sbar) {
            *l += sb;
        }
        if i > 0 {
            let (prev, _) = s.kbar.split_at_mut(i);
            for (kb, sb) in prev[i - 1].iter_mut().zip(&s.sbar) {
                *kb += offsets[i] * sb;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward pass for one member given its forward path (`(M + 1) × d`).
pub fn simulate_adjoint_path<P, A>(
    problem: &P,
    theta: &ParamPoint,
    u: &Control,
    path: ArrayView2<'_, f64>,
    a: &A,
    integrator: Integrator,
) -> Result<AdjointPath>
where
    P: EnsembleProblem + ?Sized,
    A: TerminalCost + ?Sized,
{
    check_control(problem, u)?;
    let grid = u.grid();
    let cells = grid.cells();
    let d = problem.state_dim();
    let k = problem.control_dim();
    if path.dim() != (cells + 1, d) {
        return Err(Error::Dimension(format!(
            "forward path has shape {:?}, expected ({}, {d})",
            path.dim(),
            cells + 1
        )));
    }
    let substeps = integrator.substeps.max(1);
    let h = grid.dt() / substeps as f64;

    let mut covectors = Array2::zeros((cells + 1, d));
    let mut coupling = Array2::zeros((cells, k));
    let x_t = path.row(cells).to_vec();
    let mut lam = vec![0.0; d];
    a.gradient(&x_t, theta, &mut lam);
    lam.iter_mut().for_each(|l| *l = -*l);
    covectors
        .row_mut(cells)
        .iter_mut()
        .zip(&lam)
        .for_each(|(c, l)| *c = *l);

    let mut scratch = AdjointScratch::new(d);
    let mut sub_states = vec![vec![0.0; d]; substeps];
    let mut ubar = vec![0.0; k];
    for m in (0..cells).rev() {
        let row = u.cell(m);
        sub_states[0].copy_from_slice(path.row(m).as_slice().expect("row-major path"));
        for s in 1..substeps {
            let (before, after) = sub_states.split_at_mut(s);
            after[0].copy_from_slice(&before[s - 1]);
            rk4_step(problem, &mut after[0], theta, row, h, &mut scratch.rk);
        }
        ubar.fill(0.0);
        for s in (0..substeps).rev() {
            rk4_step_adjoint(
                problem,
                &sub_states[s],
                theta,
                row,
                h,
                &mut lam,
                &mut ubar,
                &mut scratch,
            );
        }
        if lam.iter().any(|l| !l.is_finite()) {
            return Err(Error::IntegrationDiverged {
                cell: m,
                theta_index: None,
            });
        }
        covectors
            .row_mut(m)
            .iter_mut()
            .zip(&lam)
            .for_each(|(c, l)| *c = *l);
        coupling
            .row_mut(m)
            .iter_mut()
            .zip(&ubar)
            .for_each(|(c, b)| *c = b / grid.dt());
    }
    Ok(AdjointPath {
        covectors,
        coupling,
    })
}

/// Backward pass for member `j` of a bundle computed under the same `u`.
pub fn simulate_adjoint<P, A>(
    problem: &P,
    bundle: &TrajectoryBundle,
    j: usize,
    u: &Control,
    a: &A,
) -> Result<AdjointPath>
where
    P: EnsembleProblem + ?Sized,
    A: TerminalCost + ?Sized,
{
    if bundle.grid() != u.grid() {
        return Err(Error::Dimension(
            "bundle and control use different grids".into(),
        ));
    }
    simulate_adjoint_path(
        problem,
        bundle.params().get(j),
        u,
        bundle.path(j),
        a,
        Integrator::default(),
    )
    .map_err(|e| e.with_theta(j))
}

pub fn simulate_adjoint_bundle<P, A>(
    problem: &P,
    bundle: &TrajectoryBundle,
    u: &Control,
    a: &A,
) -> Result<AdjointBundle>
where
    P: EnsembleProblem + ?Sized,
    A: TerminalCost + ?Sized,
{
    let n = bundle.params().len();
    let paths = (0..n)
        .into_par_iter()
        .map(|j| simulate_adjoint(problem, bundle, j, u, a))
        .collect::<Result<Vec<_>>>()?;
    let grid = *bundle.grid();
    let mut covectors = Array3::zeros((grid.cells() + 1, n, bundle.state_dim()));
    for (j, p) in paths.iter().enumerate() {
        covectors
            .index_axis_mut(ndarray::Axis(1), j)
            .assign(&p.covectors);
    }
    Ok(AdjointBundle {
        grid,
        params: bundle.params().clone(),
        covectors,
    })
}

/// First-variation density of `Σ_j w_j a(X(T, θ_j), θ_j) + ∫ f`:
/// `g_m = ∂_v f(t_m, u_m) − Σ_j w_j b_{j,m}`.
///
/// The derivative of the weighted discrete cost with respect to `u_m` is
/// `g_m · dt`.
pub fn gateaux_gradient<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    weights: &[f64],
    u: &Control,
    f: &RunningCost,
) -> Result<Array2<f64>> {
    if weights.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} parameter points",
            weights.len(),
            params.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Precondition("weights must be non-negative".into()));
    }
    let grid = u.grid();
    let mut g = Array2::zeros((grid.cells(), u.channels()));
    for m in 0..grid.cells() {
        let df = f.gradient_density(grid.cell_start(m), u.cell(m), m)?;
        g.row_mut(m).iter_mut().zip(df).for_each(|(gi, d)| *gi = d);
    }
    let active: Vec<usize> = (0..params.len()).filter(|&j| weights[j] > 0.0).collect();
    let sens = active
        .par_iter()
        .map(|&j| {
            model
                .sensitivity(params.get(j), u)
                .map_err(|e| e.with_theta(j))
        })
        .collect::<Result<Vec<_>>>()?;
    for (&j, s) in active.iter().zip(&sens) {
        g.scaled_add(-weights[j], &s.coupling);
    }
    Ok(g)
}

/// One adjoint-vs-finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientSample {
    pub theta_index: usize,
    pub cell: usize,
    pub channel: usize,
    /// `∂a/∂u_m` from the coupling, `−b_m·dt`.
    pub adjoint: f64,
    /// Central difference of the terminal cost.
    pub finite_difference: f64,
    /// `|adjoint − fd| / max(|fd|, floor/rel_tol)`.
    pub relative_error: f64,
}

/// Relative tolerance and absolute floor of [`check_gradient`].
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const GRADIENT_ABS_FLOOR: f64 = 1e-8;

/// Compares `−b_m·dt` against the central difference
/// `(a(u + h e_m) − a(u − h e_m)) / 2h` for each `(θ index, cell, channel)`.
/// A sample passes when its error is within `GRADIENT_REL_TOL·|fd|` or
/// `GRADIENT_ABS_FLOOR`, i.e. when `relative_error ≤ GRADIENT_REL_TOL`.
pub fn check_gradient<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    samples: &[(usize, usize, usize)],
    h: f64,
) -> Result<Vec<GradientSample>> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!(
            "step must be positive, got {h}"
        )));
    }
    let dt = u.grid().dt();
    let scale_floor = GRADIENT_ABS_FLOOR / GRADIENT_REL_TOL;
    samples
        .par_iter()
        .map(|&(j, m, c)| {
            if j >= params.len() || m >= u.grid().cells() || c >= u.channels() {
                return Err(Error::Dimension(format!(
                    "sample ({j}, {m}, {c}) out of range"
                )));
            }
            let theta = params.get(j);
            let s = model.sensitivity(theta, u)?;
            let adjoint = -s.coupling[[m, c]] * dt;
            let shifted = |delta: f64| -> Result<f64> {
                let mut values = u.values().clone();
                values[[m, c]] += delta;
                model.terminal_cost(theta, &Control::new(*u.grid(), values)?)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            Ok(GradientSample {
                theta_index: j,
                cell: m,
                channel: c,
                adjoint,
                finite_difference: fd,
                relative_error: (adjoint - fd).abs() / fd.abs().max(scale_floor),
            })
        })
        .collect()
}

/// Unique maximizer of `v ↦ b·v − γ|v|² − (τ/2)|v − u_prev|²`, namely
/// `(b + τ·u_prev) / (2γ + τ)`.
pub fn aug_hamiltonian_argmax(b: &[f64], u_prev: &[f64], gamma: f64, tau: f64) -> Result<Vec<f64>> {
    if b.len() != u_prev.len() {
        return Err(Error::Dimension(
            "coupling and control lengths differ".into(),
        ));
    }
    if !(gamma > 0.0 && tau >= 0.0) {
        return Err(Error::Precondition(format!(
            "need gamma > 0 and tau >= 0, got gamma = {gamma}, tau = {tau}"
        )));
    }
    let denom = 2.0 * gamma + tau;
    Ok(b.iter()
        .zip(u_prev)
        .map(|(bi, ui)| (bi + tau * ui) / denom)
        .collect())
}

/// Value of the augmented Hamiltonian maximized by [`aug_hamiltonian_argmax`].
pub fn aug_hamiltonian(b: &[f64], u_prev: &[f64], gamma: f64, tau: f64, v: &[f64]) -> f64 {
    let mut val = 0.0;
    for ((bi, ui), vi) in b.iter().zip(u_prev).zip(v) {
        val += bi * vi - gamma * vi * vi - 0.5 * tau * (vi - ui) * (vi - ui);
    }
    val
}

/// Finitely supported multiplier `μ_N` on the parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierEstimate {
    pub weights: Vec<f64>,
    pub active_set: Vec<usize>,
    /// `‖Σ_j μ_j b_j − ∂_v f(·, u)‖_{L²} / max(1, ‖∂_v f(·, u)‖_{L²})`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmpReport {
    pub multiplier: MultiplierEstimate,
    /// Per-cell pointwise stationarity residual.
    pub stationarity: Vec<f64>,
    /// Max minus min terminal cost over the active set.
    pub support_slack: f64,
    pub activation_tol: f64,
    pub terminal_costs: Vec<f64>,
}

/// Iteration budget of the simplex-constrained least-squares fit.
pub const MULTIPLIER_ITERATIONS: usize = 2000;

/// Fraction of the largest terminal cost below which a member still counts
/// as active. A 1000-iteration worst-case run leaves its near-worst
/// clusters spread over roughly half a percent of the maximum, so a
/// tighter band misses most of them.
pub const ACTIVATION_TOL_FRACTION: f64 = 1e-2;

/// `ACTIVATION_TOL_FRACTION × max cost`.
pub fn default_activation_tol(costs: &[f64]) -> f64 {
    ACTIVATION_TOL_FRACTION * costs.iter().copied().fold(0.0, f64::max)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Minimizes `‖Σ_j μ_j b_j − target‖²` over the probability simplex with
/// projected gradient, step `1/L` from a power-iteration estimate of the
/// Gram matrix's top eigenvalue.
fn simplex_least_squares(
    b: &[&Array2<f64>],
    target: &Array2<f64>,
    dt: f64,
    iterations: usize,
) -> Vec<f64> {
    let n = b.len();
    let inner = |x: &Array2<f64>, y: &Array2<f64>| -> f64 { (x * y).sum() * dt };
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = inner(b[i], b[j]);
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let lin: Vec<f64> = b.iter().map(|bi| inner(bi, target)).collect();
    let mat_vec =
        |x: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&gram[i * n..(i + 1) * n], x)).collect() };

    let mut mu = vec![1.0 / n as f64; n];
    if n == 1 {
        return mu;
    }
    // power iteration from a fixed, non-degenerate start
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut top = 0.0;
    for _ in 0..100 {
        let z = mat_vec(&q);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        top = norm / q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q = z.into_iter().map(|v| v / norm).collect();
    }
    if !(top > 0.0) {
        return mu;
    }
    // gradient of μᵀGμ − 2cᵀμ is 2(Gμ − c); Lipschitz constant 2λ_max
    let step = 1.0 / (2.0 * top * 1.01);
    for _ in 0..iterations {
        let gm = mat_vec(&mu);
        let trial: Vec<f64> = mu
            .iter()
            .zip(gm.iter().zip(&lin))
            .map(|(m, (g, c))| m - step * 2.0 * (g - c))
            .collect();
        mu = project_simplex(&trial);
    }
    mu
}

/// Fits a multiplier supported on the near-worst members.
pub fn estimate_multiplier<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    f: &RunningCost,
    activation_tol: f64,
) -> Result<MultiplierEstimate> {
    Ok(multiplier_with_costs(model, params, u, f, activation_tol)?.0)
}

fn multiplier_with_costs<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    f: &RunningCost,
    activation_tol: f64,
) -> Result<(MultiplierEstimate, Vec<f64>, Array2<f64>, Array2<f64>)> {
    if !(activation_tol >= 0.0) {
        return Err(Error::Precondition(format!(
            "activation tolerance must be non-negative, got {activation_tol}"
        )));
    }
    let costs = model.terminal_costs(params, u)?;
    let max = costs[argmax_first(&costs)];
    let active_set: Vec<usize> = (0..costs.len())
        .filter(|&j| costs[j] >= max - activation_tol)
        .collect();
    let sens = active_set
        .par_iter()
        .map(|&j| {
            model
                .sensitivity(params.get(j), u)
                .map_err(|e| e.with_theta(j))
        })
        .collect::<Result<Vec<_>>>()?;

    let grid = u.grid();
    let mut target = Array2::zeros((grid.cells(), u.channels()));
    for m in 0..grid.cells() {
        let df = f.gradient_density(grid.cell_start(m), u.cell(m), m)?;
        target
            .row_mut(m)
            .iter_mut()
            .zip(df)
            .for_each(|(t, d)| *t = d);
    }
    let couplings: Vec<&Array2<f64>> = sens.iter().map(|s| &s.coupling).collect();
    let mu = simplex_least_squares(&couplings, &target, grid.dt(), MULTIPLIER_ITERATIONS);

    let mut weights = vec![0.0; params.len()];
    let mut combined = Array2::zeros(target.raw_dim());
    for ((&j, &w), s) in active_set.iter().zip(&mu).zip(&sens) {
        weights[j] = w;
        combined.scaled_add(w, &s.coupling);
    }
    let l2 = |x: &Array2<f64>| (x.iter().map(|v| v * v).sum::<f64>() * grid.dt()).sqrt();
    let residual = l2(&(&combined - &target)) / l2(&target).max(1.0);
    Ok((
        MultiplierEstimate {
            weights,
            active_set,
            residual,
        },
        costs,
        combined,
        target,
    ))
}

/// Estimates the multiplier and checks the pointwise maximum condition.
///
/// For the quadratic running cost the per-cell residual is
/// `|u_m − (Σ_j μ_j b_{j,m}) / (2γ)|`; for a general density it is
/// `|Σ_j μ_j b_{j,m} − ∂_v f(t_m, u_m)|`.
pub fn pmp_check<M: EnsembleModel + ?Sized>(
    model: &M,
    params: &ParamSet,
    u: &Control,
    f: &RunningCost,
    activation_tol: f64,
) -> Result<PmpReport> {
    let (multiplier, costs, combined, target) =
        multiplier_with_costs(model, params, u, f, activation_tol)?;
    let stationarity = match f.gamma() {
        Some(gamma) => combined
            .outer_iter()
            .zip(u.values().outer_iter())
            .map(|(c, v)| {
                c.iter()
                    .zip(v)
                    .map(|(ci, vi)| (vi - ci / (2.0 * gamma)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
        None => combined
            .outer_iter()
            .zip(target.outer_iter())
            .map(|(c, t)| {
                c.iter()
                    .zip(t)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    };
    let active_costs = multiplier.active_set.iter().map(|&j| costs[j]);
    let hi = active_costs.clone().fold(f64::NEG_INFINITY, f64::max);
    let lo = active_costs.fold(f64::INFINITY, f64::min);
    Ok(PmpReport {
        multiplier,
        stationarity,
        support_slack: hi - lo,
        activation_tol,
        terminal_costs: costs,
    })
}
