//! Parameter nets, Hausdorff distances and refinement sweeps.
//!
//! Replacing the parameter set `Θ` by finite `ε`-nets `Θ^N` turns the
//! minimax functional into a finite maximum. The sweep below solves the
//! discretized problem on a sequence of nets and reports how the minimum
//! values and minimizers move as the nets are refined.

use serde::Serialize;

use crate::cost::RunningCost;
use crate::ensemble::{Control, ParamPoint, ParamSet};
use crate::model::EnsembleModel;
use crate::solver::{solve_averaged, solve_minimax, NetEvaluation, SolverConfig};
use crate::{Error, Result};

/// Tensor-product uniform grid on a box, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points_per_axis: Vec<usize>,
}

impl NetSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points_per_axis: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != points_per_axis.len() {
            return Err(Error::Config(format!(
                "net spec needs matching lo/hi/points lengths, got {}/{}/{}",
                lo.len(),
                hi.len(),
                points_per_axis.len()
            )));
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::Config(format!(
                    "axis {axis}: need lo < hi, got [{l}, {h}]"
                )));
            }
        }
        if let Some(n) = points_per_axis.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!(
                "every axis needs at least 2 points, got {n}"
            )));
        }
        Ok(Self {
            lo,
            hi,
            points_per_axis,
        })
    }

    pub fn interval(lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![points])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    pub fn total_points(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.points_per_axis[axis] - 1) as f64
    }

    /// Coordinate `i` on `axis`; `t = i/(n−1)` interpolation keeps both
    /// endpoints exact and makes nested nets share points bitwise.
    fn coordinate(&self, axis: usize, i: usize) -> f64 {
        let n = self.points_per_axis[axis];
        let t = i as f64 / (n - 1) as f64;
        self.lo[axis] * (1.0 - t) + self.hi[axis] * t
    }
}

/// All grid points in lexicographic order (last axis fastest).
pub fn make_uniform_net(spec: &NetSpec) -> Result<ParamSet> {
    let dim = spec.dim();
    let total = spec.total_points();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let coords = (0..dim).map(|a| spec.coordinate(a, idx[a])).collect();
        points.push(ParamPoint::new(coords)?);
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < spec.points_per_axis[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let bounds = spec
        .lo
        .iter()
        .copied()
        .zip(spec.hi.iter().copied())
        .collect();
    ParamSet::with_bounds(points, bounds)
}

/// `max_{a∈A} min_{b∈B} |a − b|₂`.
pub fn directed_hausdorff(a: &ParamSet, b: &ParamSet) -> f64 {
    a.points()
        .iter()
        .map(|p| {
            b.points()
                .iter()
                .map(|q| p.distance(q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Exact Hausdorff distance between two finite sets.
pub fn hausdorff_finite(a: &ParamSet, b: &ParamSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "sets of dimension {} and {} cannot be compared",
            a.dim(),
            b.dim()
        )));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Hausdorff distance between a uniform 1-D net and its whole interval:
/// half the spacing.
pub fn hausdorff_net_to_interval(spec: &NetSpec) -> Result<f64> {
    if spec.dim() != 1 {
        return Err(Error::UnsupportedDimension(spec.dim()));
    }
    Ok(spec.spacing(0) / 2.0)
}

/// Whether each net is contained in the next one.
pub fn levels_are_nested(levels: &[ParamSet]) -> bool {
    levels.windows(2).all(|w| w[0].is_subset_of(&w[1]))
}

/// Checks `J^coarse(u) ≤ J^fine(u) + 10⁻¹²` for `coarse ⊆ fine`, reusing
/// the fine-net terminal costs for the coarse maximum.
pub fn nestedness_audit<M: EnsembleModel + ?Sized>(
    model: &M,
    coarse: &ParamSet,
    fine: &ParamSet,
    u: &Control,
    f: &RunningCost,
) -> Result<bool> {
    let positions = coarse
        .points()
        .iter()
        .map(|p| fine.index_of(p))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Precondition("coarse net is not a subset of the fine net".into()))?;
    let costs = model.terminal_costs(fine, u)?;
    let running = f.integral(u);
    let fine_max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let coarse_max = positions
        .iter()
        .map(|&j| costs[j])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(coarse_max + running <= fine_max + running + 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    /// Half-spacing of the net (its Hausdorff distance to the box in 1-D).
    pub eps: f64,
    /// Minimized `J^N`.
    pub objective: f64,
    pub worst_metric_opt: f64,
    pub worst_metric_test: f64,
    pub best_metric_test: f64,
    pub l2_sq: f64,
    /// `‖u*_N − u*_ref‖_{L²}` against the finest level.
    pub distance_to_finest: f64,
    /// `|‖u*_N‖² − ‖u*_ref‖²|`.
    pub norm_gap_to_finest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub controls: Vec<Control>,
    #[serde(skip)]
    pub test_evaluations: Vec<NetEvaluation>,
}

/// Warm start plus worst-case solve on every level, each minimizer
/// evaluated on the shared `test_net`.
pub fn sweep_refinement<M: EnsembleModel + ?Sized>(
    model: &M,
    levels: &[NetSpec],
    config: &SolverConfig,
    initial: &Control,
    test_net: &ParamSet,
) -> Result<SweepReport> {
    if levels.is_empty() {
        return Err(Error::Config("a sweep needs at least one level".into()));
    }
    let nets = levels
        .iter()
        .map(make_uniform_net)
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    if levels
        .windows(2)
        .any(|w| w[0].total_points() >= w[1].total_points())
    {
        warnings.push("levels are not ordered by increasing resolution".to_string());
    }
    if !levels_are_nested(&nets) {
        warnings.push("levels are not nested; J^N need not be monotone in N".to_string());
    }

    let mut solved = Vec::with_capacity(nets.len());
    for net in &nets {
        let warm = solve_averaged(model, net, config, initial.clone())?;
        let report = solve_minimax(model, net, config, warm, Some(test_net))?;
        solved.push(report);
    }
    let reference = solved.last().expect("non-empty").control.clone();
    let ref_norm = reference.l2_norm_sq();
    let mut rows = Vec::with_capacity(solved.len());
    for ((spec, net), report) in levels.iter().zip(&nets).zip(&solved) {
        let test = report.test_net.as_ref().expect("test net requested");
        rows.push(SweepRow {
            n: net.len(),
            eps: (0..spec.dim())
                .map(|a| spec.spacing(a) / 2.0)
                .fold(0.0, f64::max),
            objective: report.objective,
            worst_metric_opt: report.optimization_net.worst_metric,
            worst_metric_test: test.worst_metric,
            best_metric_test: test.best_metric,
            l2_sq: report.l2_sq,
            distance_to_finest: report.control.l2_distance(&reference)?,
            norm_gap_to_finest: (report.l2_sq - ref_norm).abs(),
        });
    }
    Ok(SweepReport {
        rows,
        warnings,
        test_evaluations: solved
            .iter()
            .map(|r| r.test_net.clone().expect("test net requested"))
            .collect(),
        controls: solved.into_iter().map(|r| r.control).collect(),
    })
}
