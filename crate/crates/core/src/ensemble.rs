//! Ensemble dynamics: grids, controls, parameter sets and forward integration.
//!
//! Every member of the ensemble follows the control-affine system
//! `x' = F0(x, θ) + Σ_i F_i(x, θ) u_i(t)` with `x(0) = x0(θ)`. Controls are
//! piecewise constant on a uniform grid and each cell is advanced with
//! classical RK4 (optionally split into equal substeps), so the integrator
//! never straddles a control discontinuity.

use ndarray::{Array2, Array3, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Error, Result};

/// Uniform grid on `[0, T]` with `M` cells of width `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    cells: usize,
}

impl TimeGrid {
    /// Builds the grid from a horizon and a step; `dt` must divide `T`.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let ratio = horizon / dt;
        let cells = ratio.round();
        if cells < 1.0 {
            return Err(Error::Config(format!(
                "time step {dt} is larger than the horizon {horizon}"
            )));
        }
        // one rounding unit of slack on the product M·dt
        if (cells * dt - horizon).abs() > 4.0 * f64::EPSILON * horizon {
            return Err(Error::Config(format!(
                "time step {dt} does not divide the horizon {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            dt,
            cells: cells as usize,
        })
    }

    /// Builds the grid from a horizon and a cell count.
    pub fn with_cells(horizon: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Config("a time grid needs at least one cell".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            dt: horizon / cells as f64,
            cells,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of cells `M`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Left endpoint of cell `m`.
    pub fn cell_start(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    pub fn cell_midpoint(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.dt
    }

    /// All `M + 1` grid nodes.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells).map(|m| self.cell_start(m)).collect()
    }
}

/// A parameter value `θ ∈ R^l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("parameter point has no coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!(
                "parameter point has non-finite entries: {coords:?}"
            )));
        }
        Ok(Self(coords))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// First coordinate; the natural accessor for scalar parameters.
    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn distance(&self, other: &ParamPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Ordered, duplicate-free finite parameter set.
///
/// Order matters: every argmax over a parameter set resolves ties to the
/// smallest index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSet {
    points: Vec<ParamPoint>,
    bounds: Option<Vec<(f64, f64)>>,
}

impl ParamSet {
    pub fn new(points: Vec<ParamPoint>) -> Result<Self> {
        Self::build(points, None)
    }

    /// A set whose points must all lie in the box `[lo_i, hi_i]`.
    pub fn with_bounds(points: Vec<ParamPoint>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(points, Some(bounds))
    }

    /// Convenience constructor for scalar parameters.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let points = values
            .iter()
            .map(|&v| ParamPoint::scalar(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    fn build(points: Vec<ParamPoint>, bounds: Option<Vec<(f64, f64)>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Config("parameter set is empty".into()));
        };
        let dim = first.dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::Dimension(format!(
                "parameter point {:?} has dimension {}, expected {dim}",
                p.coords(),
                p.dim()
            )));
        }
        if let Some(bounds) = &bounds {
            if bounds.len() != dim {
                return Err(Error::Dimension(format!(
                    "{} bounds given for {dim}-dimensional parameters",
                    bounds.len()
                )));
            }
            for p in &points {
                let inside = p
                    .coords()
                    .iter()
                    .zip(bounds)
                    .all(|(c, (lo, hi))| lo <= c && c <= hi);
                if !inside {
                    return Err(Error::Config(format!(
                        "parameter point {:?} lies outside the declared box",
                        p.coords()
                    )));
                }
            }
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].contains(p) {
                return Err(Error::Config(format!(
                    "duplicate parameter point {:?}",
                    p.coords()
                )));
            }
        }
        Ok(Self { points, bounds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[ParamPoint] {
        &self.points
    }

    pub fn get(&self, j: usize) -> &ParamPoint {
        &self.points[j]
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// First coordinate of every point.
    pub fn scalars(&self) -> Vec<f64> {
        self.points.iter().map(ParamPoint::first).collect()
    }

    /// Position of `p` in the set (exact comparison).
    pub fn index_of(&self, p: &ParamPoint) -> Option<usize> {
        self.points.iter().position(|q| q == p)
    }

    /// Whether every point of `self` is (bitwise) a point of `other`.
    pub fn is_subset_of(&self, other: &ParamSet) -> bool {
        self.points.iter().all(|p| other.index_of(p).is_some())
    }
}

/// Piecewise-constant control: row `m` holds `u` on cell `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    grid: TimeGrid,
    values: Array2<f64>,
}

impl Control {
    pub fn new(grid: TimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.cells() {
            return Err(Error::Dimension(format!(
                "control has {} rows but the grid has {} cells",
                values.nrows(),
                grid.cells()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::Dimension("control has no channels".into()));
        }
        if let Some(m) = values
            .outer_iter()
            .position(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(format!("control is not finite in cell {m}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        Self {
            grid,
            values: Array2::zeros((grid.cells(), channels.max(1))),
        }
    }

    /// Single-channel control from per-cell values.
    pub fn from_scalar_cells(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let rows = values.len();
        let values = Array2::from_shape_vec((rows, 1), values)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn cell(&self, m: usize) -> ArrayView1<'_, f64> {
        self.values.row(m)
    }

    /// `‖u‖²_{L²}`, exact for piecewise-constant controls.
    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.dt()
    }

    /// `‖u − v‖_{L²}` for controls on the same grid.
    pub fn l2_distance(&self, other: &Control) -> Result<f64> {
        if self.grid != other.grid || self.channels() != other.channels() {
            return Err(Error::Dimension("controls live on different grids".into()));
        }
        let sq: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((sq * self.grid.dt()).sqrt())
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }
}

/// `‖u‖_{L^p}` computed cell-wise: `(Σ_m |u_m|₂^p · dt)^{1/p}`.
pub fn control_lp_norm(u: &Control, p: f64) -> Result<f64> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::Precondition(format!(
            "L^p exponent must be finite and >= 1, got {p}"
        )));
    }
    let sum: f64 = u
        .values
        .outer_iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
        .sum();
    Ok((sum * u.grid.dt()).powf(1.0 / p))
}

/// A control-affine ensemble `x' = F0(x, θ) + Σ_i F_i(x, θ) u_i`.
///
/// Jacobians are dense row-major `d × d` buffers. All evaluators must be
/// pure functions of `(x, θ)`.
pub trait EnsembleProblem: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]);
    fn control_field(&self, channel: usize, x: &[f64], theta: &ParamPoint, out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]);
    fn control_field_jacobian(
        &self,
        channel: usize,
        x: &[f64],
        theta: &ParamPoint,
        out: &mut [f64],
    );
    fn initial_state(&self, theta: &ParamPoint) -> Vec<f64>;
}

/// Forward integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Integrator {
    /// Equal RK4 substeps per control cell.
    pub substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self { substeps: 1 }
    }
}

/// Reusable buffers for one RK4 step.
pub(crate) struct Rk4Scratch {
    pub k: [Vec<f64>; 4],
    pub stage: Vec<f64>,
    pub field: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(d: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; d]),
            stage: vec![0.0; d],
            field: vec![0.0; d],
        }
    }
}

/// `out = F0(x) + Σ_i u_i F_i(x)`.
pub(crate) fn eval_field<P: EnsembleProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    theta: &ParamPoint,
    u: ArrayView1<'_, f64>,
    out: &mut [f64],
    tmp: &mut [f64],
) {
    problem.drift(x, theta, out);
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        problem.control_field(i, x, theta, tmp);
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o += ui * t;
        }
    }
}

/// One RK4 step of size `h` in place; stage inputs are left in `s.k`.
pub(crate) fn rk4_step<P: EnsembleProblem + ?Sized>(
    problem: &P,
    x: &mut [f64],
    theta: &ParamPoint,
    u: ArrayView1<'_, f64>,
    h: f64,
    s: &mut Rk4Scratch,
) {
    let Rk4Scratch { k, stage, field } = s;
    let coeffs = [0.0, 0.5 * h, 0.5 * h, h];
    for i in 0..4 {
        if i == 0 {
            stage.copy_from_slice(x);
        } else {
            for ((st, xi), kp) in stage.iter_mut().zip(x.iter()).zip(k[i - 1].iter()) {
                *st = xi + coeffs[i] * kp;
            }
        }
        let (_, rest) = k.split_at_mut(i);
        eval_field(problem, stage, theta, u, &mut rest[0], field);
    }
    for (j, xi) in x.iter_mut().enumerate() {
        *xi += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
}

/// Integrates one ensemble member; returns the `(M + 1) × d` state path.
pub fn simulate_trajectory<P: EnsembleProblem + ?Sized>(
    problem: &P,
    theta: &ParamPoint,
    u: &Control,
) -> Result<Array2<f64>> {
    simulate_trajectory_with(problem, theta, u, Integrator::default())
}

pub fn simulate_trajectory_with<P: EnsembleProblem + ?Sized>(
    problem: &P,
    theta: &ParamPoint,
    u: &Control,
    integrator: Integrator,
) -> Result<Array2<f64>> {
    check_control(problem, u)?;
    if integrator.substeps == 0 {
        return Err(Error::Config("substeps per cell must be >= 1".into()));
    }
    let d = problem.state_dim();
    let grid = u.grid();
    let mut path = Array2::zeros((grid.cells() + 1, d));
    let mut x = problem.initial_state(theta);
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "initial state has length {}, expected {d}",
            x.len()
        )));
    }
    path.row_mut(0)
        .iter_mut()
        .zip(&x)
        .for_each(|(p, v)| *p = *v);
    let h = grid.dt() / integrator.substeps as f64;
    let mut scratch = Rk4Scratch::new(d);
    for m in 0..grid.cells() {
        for _ in 0..integrator.substeps {
            rk4_step(problem, &mut x, theta, u.cell(m), h, &mut scratch);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                cell: m,
                theta_index: None,
            });
        }
        path.row_mut(m + 1)
            .iter_mut()
            .zip(&x)
            .for_each(|(p, v)| *p = *v);
    }
    Ok(path)
}

pub(crate) fn check_control<P: EnsembleProblem + ?Sized>(problem: &P, u: &Control) -> Result<()> {
    if u.channels() != problem.control_dim() {
        return Err(Error::Dimension(format!(
            "control has {} channels, problem expects {}",
            u.channels(),
            problem.control_dim()
        )));
    }
    Ok(())
}

/// Sampled trajectories `X_u(t_m, θ_j)` for a whole parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    grid: TimeGrid,
    params: ParamSet,
    /// Shape `(M + 1, |Θ^N|, d)`.
    states: Array3<f64>,
}

impl TrajectoryBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn state_dim(&self) -> usize {
        self.states.dim().2
    }

    /// Path of member `j` as an `(M + 1) × d` view.
    pub fn path(&self, j: usize) -> ndarray::ArrayView2<'_, f64> {
        self.states.index_axis(ndarray::Axis(1), j)
    }

    pub fn terminal_state(&self, j: usize) -> ArrayView1<'_, f64> {
        self.states
            .index_axis(ndarray::Axis(0), self.grid.cells())
            .index_axis_move(ndarray::Axis(0), j)
    }
}

/// Integrates every member of `params`; members run in parallel and are
/// written back by index, so the result does not depend on scheduling.
pub fn simulate_bundle<P: EnsembleProblem + ?Sized>(
    problem: &P,
    params: &ParamSet,
    u: &Control,
) -> Result<TrajectoryBundle> {
    simulate_bundle_with(problem, params, u, Integrator::default())
}

pub fn simulate_bundle_with<P: EnsembleProblem + ?Sized>(
    problem: &P,
    params: &ParamSet,
    u: &Control,
    integrator: Integrator,
) -> Result<TrajectoryBundle> {
    check_control(problem, u)?;
    let paths = params
        .points()
        .par_iter()
        .enumerate()
        .map(|(j, theta)| {
            simulate_trajectory_with(problem, theta, u, integrator).map_err(|e| e.with_theta(j))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = *u.grid();
    let d = problem.state_dim();
    let mut states = Array3::zeros((grid.cells() + 1, params.len(), d));
    for (j, path) in paths.iter().enumerate() {
        states.index_axis_mut(ndarray::Axis(1), j).assign(path);
    }
    Ok(TrajectoryBundle {
        grid,
        params: params.clone(),
        states,
    })
}

/// Checks `|X(t_m, θ_j)|₂ ≤ radius` on every sample; also returns the
/// largest sampled norm.
pub fn bound_check(bundle: &TrajectoryBundle, radius: f64) -> Result<(bool, f64)> {
    if !(radius > 0.0) {
        return Err(Error::Precondition(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let max_norm = bundle
        .states
        .lanes(ndarray::Axis(2))
        .into_iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0_f64, f64::max);
    Ok((max_norm <= radius, max_norm))
}
