//! Acceptance suite: every criterion at its pinned tolerance, one
//! PASS/FAIL line each. Run with
//! `cargo test -p ensemble-minimax-cli --test acceptance -- --nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};

use ensemble_minimax::adjoint::{
    check_gradient, default_activation_tol, pmp_check, GRADIENT_REL_TOL,
};
use ensemble_minimax::cost::{eval_minimax, RunningCost, TerminalCost};
use ensemble_minimax::ensemble::{Control, EnsembleProblem, ParamPoint, ParamSet, TimeGrid};
use ensemble_minimax::gamma::{
    hausdorff_finite, hausdorff_net_to_interval, make_uniform_net, NetSpec,
};
use ensemble_minimax::model::{EnsembleModel, SmoothModel};
use ensemble_minimax::qubit::{pauli_step, simulate_qubit, QubitState};
use ensemble_minimax_cli::commands::{self, with_model, OutputOptions};
use ensemble_minimax_cli::config::TerminalKind;
use ensemble_minimax_cli::RunConfig;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEVELS: [usize; 3] = [26, 51, 101];

fn shipped(name: &str) -> RunConfig {
    RunConfig::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join(name),
    )
    .unwrap()
}

struct Check {
    label: String,
    passed: bool,
    /// Report-only checks are printed but do not fail the suite.
    gating: bool,
    detail: String,
}

#[derive(Default)]
struct Suite(Vec<Check>);

impl Suite {
    fn record(&mut self, id: u32, name: &str, passed: bool, detail: String) {
        self.push(format!("{id:>2} {name}"), passed, true, detail);
    }

    fn report_only(&mut self, id: u32, name: &str, passed: bool, detail: String) {
        self.push(
            format!("{id:>2} {name} (report-only)"),
            passed,
            false,
            detail,
        );
    }

    fn push(&mut self, label: String, passed: bool, gating: bool, detail: String) {
        let line = format!(
            "{} criterion {label}: {detail}\n",
            if passed { "PASS" } else { "FAIL" }
        );
        // straight to stderr so the line shows even under captured output
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        self.0.push(Check {
            label,
            passed,
            gating,
            detail,
        });
    }

    fn info(&self, text: &str) {
        std::io::stderr()
            .write_all(format!("INFO {text}\n").as_bytes())
            .unwrap();
    }
}

struct SweepRun {
    config: RunConfig,
    dir: PathBuf,
    report: ensemble_minimax::gamma::SweepReport,
    /// `(N, max_infidelity, min_infidelity, control_l2_sq)` read back from sweep.csv.
    csv: Vec<(usize, f64, f64, f64)>,
}

fn run_sweep(name: &str, root: &Path) -> SweepRun {
    let config = shipped(name);
    let dir = root.join(name.trim_end_matches(".json"));
    let opts = OutputOptions {
        out: Some(dir.clone()),
        plots: false,
    };
    let outcome = commands::sweep(&config, &LEVELS, &opts).unwrap();
    let mut reader = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    let csv = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[0].parse().unwrap(),
                r[1].parse().unwrap(),
                r[2].parse().unwrap(),
                r[3].parse().unwrap(),
            )
        })
        .collect();
    SweepRun {
        config,
        dir,
        report: outcome.report,
        csv,
    }
}

fn table_check(
    suite: &mut Suite,
    id: u32,
    name: &str,
    run: &SweepRun,
    infidelity: (f64, f64),
    l2: (f64, f64),
) {
    let mut ok = run.csv.len() == LEVELS.len();
    let mut parts = Vec::new();
    for &(n, max_inf, _, l2_sq) in &run.csv {
        ok &= (infidelity.0..=infidelity.1).contains(&max_inf) && (l2.0..=l2.1).contains(&l2_sq);
        parts.push(format!(
            "N={n} max_infidelity={max_inf:.4} l2_sq={l2_sq:.4}"
        ));
    }
    suite.record(
        id,
        name,
        ok,
        format!(
            "{} (bands [{}, {}] and [{}, {}])",
            parts.join("; "),
            infidelity.0,
            infidelity.1,
            l2.0,
            l2.1
        ),
    );
}

fn analytic_comparison(suite: &mut Suite, t20: &SweepRun, root: &Path) {
    let analytic = commands::analytic(
        &t20.config,
        &OutputOptions {
            out: Some(root.join("analytic")),
            plots: false,
        },
    )
    .unwrap();
    let pulse = analytic.test_net.worst_infidelity;
    let optimized = t20.csv.last().unwrap().1;
    suite.record(
        3,
        "optimized control beats the analytic pulse",
        optimized < pulse,
        format!("worst infidelity {optimized:.4} (N=101) vs {pulse:.4} (analytic)"),
    );
}

fn unitarity(suite: &mut Suite, t50: &SweepRun) {
    let spec = t50.config.qubit_spec().unwrap();
    let alphas = t50.config.test_net().unwrap().scalars();
    let mut worst = 0.0_f64;
    for u in &t50.report.controls {
        for &alpha in &alphas {
            for psi in simulate_qubit(&spec, alpha, u).unwrap() {
                worst = worst.max((psi.norm() - 1.0).abs());
            }
        }
    }
    suite.record(
        4,
        "unitarity over the T=50 run",
        worst <= 1e-9,
        format!("max norm drift {worst:.2e} (tol 1e-9)"),
    );
}

/// Classical RK4 on `ψ' = −i (d σz + u σx) ψ`.
fn rk4_oracle(psi: [Complex64; 2], d: f64, u: f64, dt: f64, substeps: usize) -> [Complex64; 2] {
    let i = Complex64::i();
    let rhs = |p: [Complex64; 2]| [-i * (p[0] * d + p[1] * u), -i * (p[0] * u - p[1] * d)];
    let axpy = |p: [Complex64; 2], h: f64, k: [Complex64; 2]| [p[0] + k[0] * h, p[1] + k[1] * h];
    let h = dt / substeps as f64;
    let mut p = psi;
    for _ in 0..substeps {
        let k1 = rhs(p);
        let k2 = rhs(axpy(p, h / 2.0, k1));
        let k3 = rhs(axpy(p, h / 2.0, k2));
        let k4 = rhs(axpy(p, h, k3));
        for c in 0..2 {
            p[c] += (k1[c] + k2[c] * 2.0 + k3[c] * 2.0 + k4[c]) * (h / 6.0);
        }
    }
    p
}

fn propagator(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let d: f64 = rng.gen_range(-2.0..2.0);
        let u: f64 = rng.gen_range(-3.0..3.0);
        let dt: f64 = rng.gen_range(1e-3..0.25);
        let raw: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let psi = [
            Complex64::new(raw[0], raw[1]) / norm,
            Complex64::new(raw[2], raw[3]) / norm,
        ];
        let exact = pauli_step(&QubitState(psi), d, u, dt);
        let oracle = rk4_oracle(psi, d, u, dt, 64);
        worst = worst.max(
            (0..2)
                .map(|c| (exact.0[c] - oracle[c]).norm())
                .fold(0.0, f64::max),
        );
    }
    suite.record(
        5,
        "exact propagator vs RK4 at dt/64",
        worst <= 1e-8,
        format!("max error {worst:.2e} over 1000 triples (tol 1e-8)"),
    );
}

fn fd_error(
    model: &dyn EnsembleModel,
    params: &ParamSet,
    grid: TimeGrid,
    amp: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let values = Array2::from_shape_fn((grid.cells(), model.control_dim()), |_| {
            rng.gen_range(-amp..amp)
        });
        let u = Control::new(grid, values).unwrap();
        let j = rng.gen_range(0..params.len());
        let m = rng.gen_range(0..grid.cells());
        let sample = check_gradient(model, params, &u, &[(j, m, 0)], 1e-5).unwrap();
        worst = worst.max(sample[0].relative_error);
    }
    worst
}

fn gradients(suite: &mut Suite, t20: &RunConfig) {
    let qubit = with_model(t20, |m| {
        Ok(fd_error(m, &t20.optimization_net()?, t20.grid()?, 1.0, 61))
    })
    .unwrap();
    let pendulum = shipped("pendulum.json");
    let smooth = with_model(&pendulum, |m| {
        Ok(fd_error(
            m,
            &pendulum.optimization_net()?,
            pendulum.grid()?,
            2.0,
            62,
        ))
    })
    .unwrap();
    suite.record(
        6,
        "adjoint gradient vs central differences",
        qubit <= GRADIENT_REL_TOL && smooth <= GRADIENT_REL_TOL,
        format!("max relative error qubit {qubit:.2e}, pendulum {smooth:.2e} (tol 1e-5)"),
    );
}

fn nestedness(suite: &mut Suite, t20: &RunConfig) {
    let nets: Vec<ParamSet> = LEVELS
        .iter()
        .map(|&n| make_uniform_net(&t20.net_spec(n).unwrap()).unwrap())
        .collect();
    let f = RunningCost::quadratic(t20.gamma).unwrap();
    let grid = t20.grid().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let worst = with_model(t20, |m| {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..100 {
            let amp = rng.gen_range(0.1..2.0);
            let u = Control::from_scalar_cells(
                grid,
                (0..grid.cells())
                    .map(|_| rng.gen_range(-amp..amp))
                    .collect(),
            )?;
            let j: Vec<f64> = nets
                .iter()
                .map(|n| eval_minimax(m, n, &u, &f))
                .collect::<Result<_, _>>()?;
            worst = worst.max(j[0] - j[1]).max(j[1] - j[2]);
        }
        Ok(worst)
    })
    .unwrap();
    suite.record(
        7,
        "nested nets order the discretized functionals",
        worst <= 1e-12,
        format!("largest violation {worst:.2e} over 100 controls (tol 1e-12)"),
    );
}

fn hausdorff(suite: &mut Suite) {
    let set = |v: &[f64]| ParamSet::from_scalars(v).unwrap();
    let examples = [
        hausdorff_finite(&set(&[0.0, 1.0]), &set(&[0.0, 1.0])).unwrap() == 0.0,
        hausdorff_finite(&set(&[0.0]), &set(&[1.0])).unwrap() == 1.0,
        hausdorff_finite(&set(&[0.0, 1.0]), &set(&[0.0, 0.5, 1.0])).unwrap() == 0.5,
    ];
    let mut worst = 0.0_f64;
    for n in [2, 26, 51, 101, 1001] {
        let spec = NetSpec::interval(-0.5, 0.5, n).unwrap();
        worst =
            worst.max((hausdorff_net_to_interval(&spec).unwrap() - spec.spacing(0) / 2.0).abs());
    }
    let exact = examples.iter().filter(|&&e| e).count();
    suite.record(
        8,
        "Hausdorff distances",
        exact == 3 && worst <= 1e-15,
        format!("{exact}/3 finite-set examples exact, net-to-interval deviation {worst:.1e} (tol 1e-15)"),
    );
}

/// `x' = A(θ) x + u` with `A(θ)` a rotation at rate θ.
struct Rotor;

impl EnsembleProblem for Rotor {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        let w = theta.first();
        out[0] = w * x[1];
        out[1] = -w * x[0];
    }
    fn control_field(&self, i: usize, _: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out[0] = if i == 0 { 1.0 } else { 0.0 };
        out[1] = if i == 1 { 1.0 } else { 0.0 };
    }
    fn drift_jacobian(&self, _: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        let w = theta.first();
        out.copy_from_slice(&[0.0, w, -w, 0.0]);
    }
    fn control_field_jacobian(&self, _: usize, _: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn initial_state(&self, _: &ParamPoint) -> Vec<f64> {
        vec![1.0, 0.0]
    }
}

/// `x₀ + offset(θ)`; the couplings do not depend on the control.
struct Linear(Vec<(f64, f64)>);

impl TerminalCost for Linear {
    fn value(&self, x: &[f64], theta: &ParamPoint) -> f64 {
        x[0] + self.0.iter().find(|(w, _)| *w == theta.first()).unwrap().1
    }
    fn gradient(&self, _: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0]);
    }
}

/// Residual for the exact weighted-Hamiltonian argmax of a chosen `μ`.
fn oracle_residual() -> f64 {
    let rates = [0.5, 1.0, 2.0];
    let mu = [0.2, 0.5, 0.3];
    let gamma = 0.25;
    let params = ParamSet::from_scalars(&rates).unwrap();
    let grid = TimeGrid::new(10.0, 0.05).unwrap();
    let probe = Linear(rates.iter().map(|&w| (w, 10.0)).collect());
    let b = SmoothModel::new(&Rotor, &probe)
        .sensitivities(&params, &Control::zeros(grid, 2))
        .unwrap();
    let mut argmax = Array2::zeros((grid.cells(), 2));
    for (w, s) in mu.iter().zip(&b) {
        argmax.scaled_add(*w / (2.0 * gamma), &s.coupling);
    }
    let u = Control::new(grid, argmax).unwrap();
    let costs = SmoothModel::new(&Rotor, &probe)
        .terminal_costs(&params, &u)
        .unwrap();
    let tied = Linear(
        rates
            .iter()
            .zip(&costs)
            .map(|(&w, c)| (w, 11.0 - c))
            .collect(),
    );
    let f = RunningCost::quadratic(gamma).unwrap();
    pmp_check(&SmoothModel::new(&Rotor, &tied), &params, &u, &f, 1e-9)
        .unwrap()
        .multiplier
        .residual
}

fn pmp_diagnostic(suite: &mut Suite, t20: &SweepRun) {
    let config = &t20.config;
    let params = config.optimization_net().unwrap();
    let u = t20.report.controls.last().unwrap();
    let f = config.solver(true).running_cost().unwrap();
    let (report, coarse) = with_model(config, |m| {
        let costs = m.terminal_costs(&params, u)?;
        let report = pmp_check(m, &params, u, &f, default_activation_tol(&costs))?;
        let max = costs.iter().copied().fold(0.0, f64::max);
        let coarse = pmp_check(m, &params, u, &f, 1e-3 * max)?;
        Ok((report, coarse))
    })
    .unwrap();
    let w = &report.multiplier.weights;
    let on_simplex = w.iter().all(|&x| x >= -1e-12) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
    let residual = report.multiplier.residual;
    let slack_ok = report.support_slack <= report.activation_tol;
    let oracle = oracle_residual();
    suite.record(
        9,
        "multiplier diagnostic",
        on_simplex && slack_ok && residual <= 0.1 && oracle <= 1e-10,
        format!(
            "simplex {on_simplex}, slack {:.2e} <= tol {:.2e}, residual {residual:.4} (tol 0.1), {} active; oracle residual {oracle:.1e} (tol 1e-10)",
            report.support_slack,
            report.activation_tol,
            report.multiplier.active_set.len()
        ),
    );
    suite.info(&format!(
        "multiplier residual with a tighter activation band {:.2e}: {:.4} over {} active members",
        coarse.activation_tol,
        coarse.multiplier.residual,
        coarse.multiplier.active_set.len()
    ));
}

fn strong_convergence(suite: &mut Suite, t20: &SweepRun) {
    let rows = &t20.report.rows;
    let (gap26, gap51) = (rows[0].norm_gap_to_finest, rows[1].norm_gap_to_finest);
    let (d26, d51) = (rows[0].distance_to_finest, rows[1].distance_to_finest);
    let slack = 1.2;
    suite.report_only(
        10,
        "minimizers approach the finest level",
        gap51 <= slack * gap26 && d51 <= slack * d26,
        format!("norm gap {gap26:.4} -> {gap51:.4}, L2 distance {d26:.4} -> {d51:.4} (20% slack)"),
    );
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let mut suite = Suite::default();

    let t20 = run_sweep("paper_t20.json", root.path());
    table_check(
        &mut suite,
        1,
        "T=20 refinement table",
        &t20,
        (0.03, 0.065),
        (1.45, 2.0),
    );
    let t50 = run_sweep("paper_t50.json", root.path());
    table_check(
        &mut suite,
        2,
        "T=50 refinement table",
        &t50,
        (0.03, 0.06),
        (1.5, 2.1),
    );
    analytic_comparison(&mut suite, &t20, root.path());
    unitarity(&mut suite, &t50);
    propagator(&mut suite);
    gradients(&mut suite, &t20.config);
    nestedness(&mut suite, &t20.config);
    hausdorff(&mut suite);
    pmp_diagnostic(&mut suite, &t20);
    strong_convergence(&mut suite, &t20);

    // the squared-overlap terminal form, for comparison only
    let mut squared = t20.config.clone();
    squared.terminal = TerminalKind::Squared;
    let opts = OutputOptions {
        out: Some(root.path().join("squared")),
        plots: false,
    };
    let row = &commands::sweep(&squared, &[101], &opts)
        .unwrap()
        .report
        .rows[0];
    suite.info(&format!(
        "T=20, N=101 with the squared terminal cost: max_infidelity {:.4}, l2_sq {:.4}",
        row.worst_metric_test, row.l2_sq
    ));
    assert!(t20.dir.join("control_N101.csv").is_file());

    let failed: Vec<String> = suite
        .0
        .iter()
        .filter(|c| c.gating && !c.passed)
        .map(|c| format!("{}: {}", c.label, c.detail))
        .collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
