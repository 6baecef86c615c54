use ensemble_minimax::cost::{eval_averaged, eval_minimax, RunningCost};
use ensemble_minimax::ensemble::{Control, TimeGrid};
use ensemble_minimax::gamma::*;
use ensemble_minimax::model::SmoothModel;
use ensemble_minimax::problems::{Pendulum, PendulumEnergy};
use ensemble_minimax::qubit::*;
use ensemble_minimax::solver::*;
use proptest::prelude::*;

fn short_config() -> SolverConfig {
    SolverConfig {
        gamma: 1.0 / 16.0,
        tau0: 8.0,
        max_iter: 60,
        warmstart_iter: 30,
        warmstart_tau: 4.0,
        pmp: true,
    }
}

fn short_qubit() -> (QubitModel, QubitEnsembleSpec, TimeGrid) {
    let spec = QubitEnsembleSpec::new(1.0, -0.5, 0.5).unwrap();
    (
        QubitModel::new(spec),
        spec,
        TimeGrid::new(5.0, 1.0 / 32.0).unwrap(),
    )
}

fn resonant(grid: TimeGrid, amp: f64) -> Control {
    Control::from_scalar_cells(
        grid,
        (0..grid.cells())
            .map(|m| amp * (2.0 * grid.cell_midpoint(m)).cos())
            .collect(),
    )
    .unwrap()
}

#[test]
fn warm_start_lowers_the_averaged_functional() {
    let (model, _, grid) = short_qubit();
    let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 11).unwrap()).unwrap();
    let config = short_config();
    let f = config.running_cost().unwrap();
    let start = resonant(grid, 0.2);
    let before = eval_averaged(&model, &net, &start, &f).unwrap();
    let warm = solve_averaged(&model, &net, &config, start).unwrap();
    assert!(eval_averaged(&model, &net, &warm, &f).unwrap() < before);
    assert!(averaged_objective(&model, &net, &warm, config.gamma).unwrap() < 1.0);
}

#[test]
fn minimax_solve_improves_on_its_warm_start() {
    let (model, _, grid) = short_qubit();
    let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 11).unwrap()).unwrap();
    let config = short_config();
    let f = config.running_cost().unwrap();
    let warm = solve_averaged(&model, &net, &config, resonant(grid, 0.2)).unwrap();
    let start = eval_minimax(&model, &net, &warm, &f).unwrap();
    let report = solve_minimax(&model, &net, &config, warm, None).unwrap();
    assert!(report.objective <= start);
    assert!(
        (report.objective - eval_minimax(&model, &net, &report.control, &f).unwrap()).abs()
            <= 1e-12
    );
    assert_eq!(report.trace.len(), config.max_iter);
    for (n, rec) in report.trace.records.iter().enumerate() {
        assert_eq!(rec.tau, config.tau_at(n + 1));
        assert!(rec.best_objective <= rec.objective);
    }
    let pmp = report.pmp.unwrap();
    assert!(pmp.support_slack <= pmp.activation_tol);
}

#[test]
fn solves_are_deterministic() {
    let (model, _, grid) = short_qubit();
    let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 11).unwrap()).unwrap();
    let config = SolverConfig {
        max_iter: 20,
        ..short_config()
    };
    let run = || solve_minimax(&model, &net, &config, resonant(grid, 0.3), None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.control, b.control);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn zero_control_is_a_fixed_point_on_the_qubit() {
    let (model, _, grid) = short_qubit();
    let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 5).unwrap()).unwrap();
    let config = SolverConfig {
        max_iter: 3,
        warmstart_iter: 3,
        ..short_config()
    };
    let warm = solve_averaged(&model, &net, &config, Control::zeros(grid, 1)).unwrap();
    assert!(warm.values().iter().all(|v| *v == 0.0));
    let report = solve_minimax(&model, &net, &config, warm, None).unwrap();
    assert_eq!(report.optimization_net.worst.value, 1.0);
    let pmp = report.pmp.unwrap();
    assert_eq!(pmp.multiplier.residual, 0.0);
    assert_eq!(pmp.support_slack, 0.0);
}

#[test]
fn zero_iterations_return_the_start() {
    let (model, _, grid) = short_qubit();
    let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 5).unwrap()).unwrap();
    let config = SolverConfig {
        max_iter: 0,
        warmstart_iter: 0,
        ..short_config()
    };
    let start = resonant(grid, 0.4);
    let report = solve_minimax(&model, &net, &config, start.clone(), None).unwrap();
    assert_eq!(report.control, start);
    assert!(report.trace.is_empty());
}

#[test]
fn sweep_reports_every_level_against_the_finest() {
    let problem = Pendulum::default();
    let model = SmoothModel::new(&problem, &PendulumEnergy);
    let grid = TimeGrid::new(2.0, 0.05).unwrap();
    let levels = [
        NetSpec::interval(0.5, 2.0, 3).unwrap(),
        NetSpec::interval(0.5, 2.0, 5).unwrap(),
    ];
    let test = make_uniform_net(&NetSpec::interval(0.5, 2.0, 31).unwrap()).unwrap();
    let config = SolverConfig {
        max_iter: 40,
        warmstart_iter: 20,
        pmp: false,
        ..short_config()
    };
    let report =
        sweep_refinement(&model, &levels, &config, &Control::zeros(grid, 1), &test).unwrap();
    assert!(report.warnings.is_empty());
    assert_eq!(
        report.rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        vec![3, 5]
    );
    let last = report.rows.last().unwrap();
    assert_eq!(last.distance_to_finest, 0.0);
    assert_eq!(last.norm_gap_to_finest, 0.0);
    assert_eq!(report.rows[0].eps, 0.375);
    assert_eq!(report.test_evaluations[0].costs.len(), 31);

    let odd = [
        NetSpec::interval(0.5, 2.0, 4).unwrap(),
        NetSpec::interval(0.5, 2.0, 5).unwrap(),
    ];
    let config = SolverConfig {
        max_iter: 2,
        warmstart_iter: 0,
        ..config
    };
    let report = sweep_refinement(&model, &odd, &config, &Control::zeros(grid, 1), &test).unwrap();
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.rows.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn averaged_functional_never_exceeds_the_worst_case(seed in 0u64..10_000, amp in 0.0..3.0_f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (model, _, _) = short_qubit();
        let grid = TimeGrid::new(2.0, 1.0 / 16.0).unwrap();
        let u = Control::from_scalar_cells(grid, (0..grid.cells()).map(|_| rng.gen_range(-1.0..1.0) * amp).collect()).unwrap();
        let net = make_uniform_net(&NetSpec::interval(-0.5, 0.5, 26).unwrap()).unwrap();
        let f = RunningCost::quadratic(1.0 / 16.0).unwrap();
        prop_assert!(eval_averaged(&model, &net, &u, &f).unwrap() <= eval_minimax(&model, &net, &u, &f).unwrap() + 1e-15);
    }
}
