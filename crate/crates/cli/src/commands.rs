//! The subcommands, callable as library functions so tests can drive them
//! without spawning the binary.

use std::path::{Path, PathBuf};

use ensemble_minimax::adjoint::{
    check_gradient, default_activation_tol, pmp_check, PmpReport, GRADIENT_REL_TOL,
};
use ensemble_minimax::ensemble::{Control, ParamPoint, ParamSet};
use ensemble_minimax::gamma::{
    hausdorff_finite, hausdorff_net_to_interval, make_uniform_net, sweep_refinement, NetSpec,
    SweepReport, SweepRow,
};
use ensemble_minimax::model::{EnsembleModel, Sensitivity, SmoothModel};
use ensemble_minimax::problems::{Pendulum, PendulumEnergy};
use ensemble_minimax::qubit::{fidelity_cost, qubit_terminal, QubitModel};
use ensemble_minimax::solver::{
    solve_averaged, solve_minimax, IterationTrace, NetEvaluation, SolveReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ProblemKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{
    fmt_f64, line_plot_svg, read_control, write_control, write_csv, write_json, write_svg,
};

/// Runs `f` with the model the configuration describes.
pub fn with_model<R>(
    config: &RunConfig,
    f: impl FnOnce(&dyn EnsembleModel) -> CliResult<R>,
) -> CliResult<R> {
    match config.problem {
        ProblemKind::Qubit => f(&QubitModel::with_terminal(
            config.qubit_spec()?,
            config.terminal.into(),
        )),
        ProblemKind::Pendulum => {
            let problem = Pendulum::default();
            f(&SmoothModel::new(&problem, &PendulumEnergy))
        }
    }
}

/// Summary of one control on one parameter net.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetSummary {
    pub points: usize,
    pub worst_alpha: f64,
    /// Terminal cost in the configured form.
    pub worst_cost: f64,
    pub worst_infidelity: f64,
    pub best_infidelity: f64,
}

impl NetSummary {
    pub fn new(eval: &NetEvaluation) -> Self {
        Self {
            points: eval.costs.len(),
            worst_alpha: eval.worst.theta.first(),
            worst_cost: eval.worst.value,
            worst_infidelity: eval.worst_metric,
            best_infidelity: eval.best_metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Weight {
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmpSummary {
    pub residual: f64,
    pub support_slack: f64,
    pub activation_tol: f64,
    pub active_set: Vec<usize>,
    /// Members with positive weight.
    pub support: Vec<Weight>,
    pub max_pointwise_residual: f64,
}

impl PmpSummary {
    pub fn new(report: &PmpReport, params: &ParamSet) -> Self {
        Self {
            residual: report.multiplier.residual,
            support_slack: report.support_slack,
            activation_tol: report.activation_tol,
            active_set: report.multiplier.active_set.clone(),
            support: report
                .multiplier
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(j, &weight)| Weight {
                    alpha: params.get(j).first(),
                    weight,
                })
                .collect(),
            max_pointwise_residual: report.stationarity.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "J")]
    pub objective: f64,
    pub l2_sq: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub optimization_net: NetSummary,
    pub test_net: NetSummary,
    pub pmp: Option<PmpSummary>,
}

impl SolveSummary {
    fn new(report: &SolveReport, params: &ParamSet) -> Self {
        Self {
            n: params.len(),
            objective: report.objective,
            l2_sq: report.l2_sq,
            best_iteration: report.best_iteration,
            iterations: report.trace.len(),
            optimization_net: NetSummary::new(&report.optimization_net),
            test_net: NetSummary::new(report.test_net.as_ref().expect("test net requested")),
            pmp: report.pmp.as_ref().map(|p| PmpSummary::new(p, params)),
        }
    }
}

#[derive(Debug, Serialize)]
struct SolveDocument<'a> {
    command: &'static str,
    config: &'a RunConfig,
    result: &'a SolveSummary,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SweepDocument<'a> {
    command: &'static str,
    config: &'a RunConfig,
    levels: &'a [usize],
    rows: &'a [SweepRow],
    warnings: &'a [String],
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct AnalyticDocument<'a> {
    command: &'static str,
    config: &'a RunConfig,
    l2_sq: f64,
    test_net: &'a NetSummary,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct PmpDocument<'a> {
    command: &'static str,
    config: &'a RunConfig,
    control: String,
    #[serde(rename = "N")]
    n: usize,
    pmp: &'a PmpSummary,
    files: Vec<String>,
}

/// Output options shared by the file-writing commands.
#[derive(Debug, Clone, Default)]
pub struct OutputOptions {
    /// Overrides the configuration's output directory.
    pub out: Option<PathBuf>,
    pub plots: bool,
}

impl OutputOptions {
    fn dir(&self, config: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| config.output_dir.clone())
    }
}

fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect()
}

/// Writes `profile.csv` for `u` on `net`; returns the plotted `(α, infidelity)` pairs.
fn write_profile(
    config: &RunConfig,
    path: &Path,
    net: &ParamSet,
    u: &Control,
    eval: &NetEvaluation,
) -> CliResult<Vec<(f64, f64)>> {
    match config.problem {
        ProblemKind::Qubit => {
            let spec = config.qubit_spec()?;
            let rows = net
                .points()
                .par_iter()
                .map(|p| {
                    let psi = qubit_terminal(&spec, p.first(), u)?;
                    let (cost_sq, infidelity) = fidelity_cost(&psi)?;
                    Ok((p.first(), psi.target_overlap().norm(), infidelity, cost_sq))
                })
                .collect::<Result<Vec<_>, ensemble_minimax::Error>>()?;
            write_csv(
                path,
                &["alpha", "overlap", "infidelity", "cost_sq"],
                rows.iter()
                    .map(|r| vec![fmt_f64(r.0), fmt_f64(r.1), fmt_f64(r.2), fmt_f64(r.3)]),
            )?;
            Ok(rows.iter().map(|r| (r.0, r.2)).collect())
        }
        ProblemKind::Pendulum => {
            let alphas = net.scalars();
            write_csv(
                path,
                &["alpha", "cost"],
                alphas
                    .iter()
                    .zip(&eval.costs)
                    .map(|(a, c)| vec![fmt_f64(*a), fmt_f64(*c)]),
            )?;
            Ok(alphas
                .into_iter()
                .zip(eval.metrics.iter().copied())
                .collect())
        }
    }
}

fn write_trace(config: &RunConfig, path: &Path, trace: &IterationTrace) -> CliResult<()> {
    let qubit = config.problem == ProblemKind::Qubit;
    write_csv(
        path,
        &[
            "iter",
            "worst_alpha",
            "worst_cost_sq",
            "worst_infidelity",
            "l2_sq",
            "J",
            "tau",
        ],
        trace.records.iter().map(|r| {
            let cost_sq = if qubit {
                r.worst_metric * (2.0 - r.worst_metric)
            } else {
                r.worst_cost
            };
            vec![
                r.iter.to_string(),
                fmt_f64(r.worst_theta),
                fmt_f64(cost_sq),
                fmt_f64(r.worst_metric),
                fmt_f64(r.l2_sq),
                fmt_f64(r.objective),
                fmt_f64(r.tau),
            ]
        }),
    )
}

fn control_series(u: &Control) -> Vec<(f64, f64)> {
    (0..u.grid().cells())
        .map(|m| (u.grid().cell_midpoint(m), u.values()[[m, 0]]))
        .collect()
}

pub struct SolveOutcome {
    pub report: SolveReport,
    pub summary: SolveSummary,
    pub files: Vec<PathBuf>,
}

/// Warm start plus worst-case solve on the configured net.
pub fn solve(
    config: &RunConfig,
    initial: Option<Control>,
    opts: &OutputOptions,
) -> CliResult<SolveOutcome> {
    let params = config.optimization_net()?;
    let test = config.test_net()?;
    let start = match initial {
        Some(u) => u,
        None => config.initial()?,
    };
    let solver = config.solver(true);
    let report = with_model(config, |model| {
        let warm = solve_averaged(model, &params, &solver, start)?;
        Ok(solve_minimax(model, &params, &solver, warm, Some(&test))?)
    })?;
    let summary = SolveSummary::new(&report, &params);

    let dir = opts.dir(config);
    let mut files = vec![
        dir.join("control.csv"),
        dir.join("trace.csv"),
        dir.join("profile.csv"),
    ];
    write_control(&files[0], &report.control)?;
    write_trace(config, &files[1], &report.trace)?;
    let profile = write_profile(
        config,
        &files[2],
        &test,
        &report.control,
        report.test_net.as_ref().expect("test net requested"),
    )?;
    if opts.plots {
        let p = dir.join("profile.svg");
        write_svg(
            &p,
            &line_plot_svg(
                "Infidelity on the test net",
                "alpha",
                "infidelity",
                &[("optimized", profile)],
            ),
        )?;
        let c = dir.join("control.svg");
        write_svg(
            &c,
            &line_plot_svg(
                "Control",
                "t",
                "u",
                &[("optimized", control_series(&report.control))],
            ),
        )?;
        files.extend([p, c]);
    }
    let report_path = dir.join("report.json");
    files.push(report_path.clone());
    write_json(
        &report_path,
        &SolveDocument {
            command: "solve",
            config,
            result: &summary,
            files: file_names(&files),
        },
    )?;
    Ok(SolveOutcome {
        report,
        summary,
        files,
    })
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub files: Vec<PathBuf>,
}

/// Solves every level and evaluates each minimizer on the shared test net.
pub fn sweep(
    config: &RunConfig,
    levels: &[usize],
    opts: &OutputOptions,
) -> CliResult<SweepOutcome> {
    if levels.is_empty() {
        return Err(CliError::Config("a sweep needs at least one level".into()));
    }
    let specs = levels
        .iter()
        .map(|&n| config.net_spec(n))
        .collect::<CliResult<Vec<NetSpec>>>()?;
    let test = config.test_net()?;
    let initial = config.initial()?;
    let solver = config.solver(false);
    let report = with_model(config, |model| {
        Ok(sweep_refinement(model, &specs, &solver, &initial, &test)?)
    })?;

    let dir = opts.dir(config);
    let sweep_path = dir.join("sweep.csv");
    write_csv(
        &sweep_path,
        &["N", "max_infidelity", "min_infidelity", "control_l2_sq"],
        report.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.worst_metric_test),
                fmt_f64(r.best_metric_test),
                fmt_f64(r.l2_sq),
            ]
        }),
    )?;
    let mut files = vec![sweep_path];
    let mut profiles = Vec::new();
    for ((row, u), eval) in report
        .rows
        .iter()
        .zip(&report.controls)
        .zip(&report.test_evaluations)
    {
        let c = dir.join(format!("control_N{}.csv", row.n));
        let p = dir.join(format!("profile_N{}.csv", row.n));
        write_control(&c, u)?;
        profiles.push((
            format!("N = {}", row.n),
            write_profile(config, &p, &test, u, eval)?,
        ));
        files.extend([c, p]);
    }
    if opts.plots {
        let p = dir.join("profiles.svg");
        let series: Vec<(&str, Vec<(f64, f64)>)> = profiles
            .iter()
            .map(|(n, s)| (n.as_str(), s.clone()))
            .collect();
        write_svg(
            &p,
            &line_plot_svg("Infidelity on the test net", "alpha", "infidelity", &series),
        )?;
        files.push(p);
    }
    let report_path = dir.join("report.json");
    files.push(report_path.clone());
    write_json(
        &report_path,
        &SweepDocument {
            command: "sweep",
            config,
            levels,
            rows: &report.rows,
            warnings: &report.warnings,
            files: file_names(&files),
        },
    )?;
    Ok(SweepOutcome { report, files })
}

pub struct AnalyticOutcome {
    pub control: Control,
    pub test_net: NetSummary,
    pub files: Vec<PathBuf>,
}

/// Evaluates the explicit pulse on the test net.
pub fn analytic(config: &RunConfig, opts: &OutputOptions) -> CliResult<AnalyticOutcome> {
    if config.problem != ProblemKind::Qubit {
        return Err(CliError::Config(
            "the analytic pulse is defined for the qubit problem only".into(),
        ));
    }
    let control = ensemble_minimax::qubit::analytic_control(
        &config.pulse()?,
        &config.qubit_spec()?,
        &config.grid()?,
    )?;
    let test = config.test_net()?;
    let eval = with_model(config, |model| {
        Ok(NetEvaluation::new(model, &test, &control)?)
    })?;
    let summary = NetSummary::new(&eval);

    let dir = opts.dir(config);
    let mut files = vec![dir.join("control.csv"), dir.join("profile.csv")];
    write_control(&files[0], &control)?;
    let profile = write_profile(config, &files[1], &test, &control, &eval)?;
    if opts.plots {
        let p = dir.join("profile.svg");
        write_svg(
            &p,
            &line_plot_svg(
                "Infidelity on the test net",
                "alpha",
                "infidelity",
                &[("analytic", profile)],
            ),
        )?;
        let c = dir.join("control.svg");
        write_svg(
            &c,
            &line_plot_svg(
                "Control",
                "t",
                "u",
                &[("analytic", control_series(&control))],
            ),
        )?;
        files.extend([p, c]);
    }
    let report_path = dir.join("report.json");
    files.push(report_path.clone());
    write_json(
        &report_path,
        &AnalyticDocument {
            command: "analytic",
            config,
            l2_sq: control.l2_norm_sq(),
            test_net: &summary,
            files: file_names(&files),
        },
    )?;
    Ok(AnalyticOutcome {
        control,
        test_net: summary,
        files,
    })
}

/// Negates every coupling of the wrapped model.
struct SignFlipped<'a>(&'a dyn EnsembleModel);

impl EnsembleModel for SignFlipped<'_> {
    fn control_dim(&self) -> usize {
        self.0.control_dim()
    }

    fn terminal_cost(&self, theta: &ParamPoint, u: &Control) -> ensemble_minimax::Result<f64> {
        self.0.terminal_cost(theta, u)
    }

    fn sensitivity(
        &self,
        theta: &ParamPoint,
        u: &Control,
    ) -> ensemble_minimax::Result<Sensitivity> {
        let mut s = self.0.sensitivity(theta, u)?;
        s.coupling.mapv_inplace(|b| -b);
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOutcome {
    pub samples: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Adjoint couplings against central differences at random cells of
/// randomly perturbed copies of the configured initial control.
pub fn grad_check(
    config: &RunConfig,
    samples: usize,
    seed: u64,
    tamper: bool,
) -> CliResult<GradCheckOutcome> {
    let params = config.optimization_net()?;
    let base = config.initial()?;
    let cells = base.grid().cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_relative_error = with_model(config, |model| {
        let flipped = SignFlipped(model);
        let model: &dyn EnsembleModel = if tamper { &flipped } else { model };
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let values = base.values().mapv(|v| v + rng.gen_range(-0.5..0.5));
            let u = Control::new(*base.grid(), values)?;
            let sample = (rng.gen_range(0..params.len()), rng.gen_range(0..cells), 0);
            let result = check_gradient(model, &params, &u, &[sample], 1e-5)?;
            worst = worst.max(result[0].relative_error);
        }
        Ok(worst)
    })?;
    Ok(GradCheckOutcome {
        samples,
        max_relative_error,
        passed: max_relative_error <= GRADIENT_REL_TOL,
    })
}

pub struct PmpOutcome {
    pub report: PmpReport,
    pub summary: PmpSummary,
    pub files: Vec<PathBuf>,
}

/// Multiplier diagnostic for a stored control on the configured net.
pub fn pmp(
    config: &RunConfig,
    control_path: &Path,
    activation_tol: Option<f64>,
    opts: &OutputOptions,
) -> CliResult<PmpOutcome> {
    let params = config.optimization_net()?;
    let u = read_control(control_path, &config.grid()?)?;
    let f = config.solver(true).running_cost()?;
    let report = with_model(config, |model| {
        let tol = match activation_tol {
            Some(t) => t,
            None => default_activation_tol(&model.terminal_costs(&params, &u)?),
        };
        Ok(pmp_check(model, &params, &u, &f, tol)?)
    })?;
    let summary = PmpSummary::new(&report, &params);

    let dir = opts.dir(config);
    let multiplier = dir.join("multiplier.csv");
    write_csv(
        &multiplier,
        &["alpha", "weight"],
        params
            .scalars()
            .iter()
            .zip(&report.multiplier.weights)
            .map(|(a, w)| vec![fmt_f64(*a), fmt_f64(*w)]),
    )?;
    let json = dir.join("pmp.json");
    let files = vec![multiplier, json.clone()];
    write_json(
        &json,
        &PmpDocument {
            command: "pmp-check",
            config,
            control: control_path.display().to_string(),
            n: params.len(),
            pmp: &summary,
            files: file_names(&files),
        },
    )?;
    Ok(PmpOutcome {
        report,
        summary,
        files,
    })
}

/// A finite set given as `x1,x2,...` or as a uniform net `lo:hi:n`.
pub fn parse_set(text: &str) -> CliResult<ParamSet> {
    let bad = || CliError::Config(format!("cannot read a parameter set from {text:?}"));
    let numbers = |sep: char| -> CliResult<Vec<f64>> {
        text.split(sep)
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return Ok(make_uniform_net(&NetSpec::interval(lo, hi, n)?)?);
    }
    Ok(ParamSet::from_scalars(&numbers(',')?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HausdorffOutcome {
    /// `d_H(a, b)` when two sets were given.
    pub between: Option<f64>,
    /// Distance of the configured optimization and test nets to the interval.
    pub optimization_net_to_interval: Option<f64>,
    pub test_net_to_interval: Option<f64>,
}

pub fn hausdorff(
    config: Option<&RunConfig>,
    a: Option<&str>,
    b: Option<&str>,
) -> CliResult<HausdorffOutcome> {
    let between = match (a, b) {
        (Some(a), Some(b)) => Some(hausdorff_finite(&parse_set(a)?, &parse_set(b)?)?),
        (None, None) => None,
        _ => {
            return Err(CliError::Config(
                "--a and --b must be given together".into(),
            ))
        }
    };
    let (opt, test) = match config {
        Some(c) => (
            Some(hausdorff_net_to_interval(&c.net_spec(c.net_size)?)?),
            Some(hausdorff_net_to_interval(&c.net_spec(c.test_size)?)?),
        ),
        None => (None, None),
    };
    if between.is_none() && config.is_none() {
        return Err(CliError::Config("give --a and --b, or --config".into()));
    }
    Ok(HausdorffOutcome {
        between,
        optimization_net_to_interval: opt,
        test_net_to_interval: test,
    })
}
