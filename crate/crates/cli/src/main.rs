use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ensemble_minimax_cli::commands::{self, OutputOptions};
use ensemble_minimax_cli::config::parse_levels;
use ensemble_minimax_cli::output::read_control;
use ensemble_minimax_cli::{configure_threads, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(
    name = "minimax-ctl",
    version,
    about = "Worst-case ensemble control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configuration's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
}

impl Common {
    fn load(&self) -> CliResult<(RunConfig, OutputOptions)> {
        let config = RunConfig::load(&self.config)?;
        Ok((
            config,
            OutputOptions {
                out: self.out.clone(),
                plots: self.plots,
            },
        ))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Warm start and worst-case solve on the configured net.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Start from this control (t,u CSV) instead of the configured one.
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Solve on several nested nets and compare on the test net.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated net sizes; defaults to the configured N.
        #[arg(long)]
        levels: Option<String>,
    },
    /// Evaluate the explicit pulse on the test net.
    Analytic {
        #[command(flatten)]
        common: Common,
    },
    /// Compare adjoint couplings with finite differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Negate the adjoint couplings (self-test of the check).
        #[arg(long, hide = true)]
        tamper_sign: bool,
    },
    /// Estimate the multiplier of a stored control.
    PmpCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        control: PathBuf,
        /// Activation band; defaults to a fixed fraction of the largest cost.
        #[arg(long)]
        activation_tol: Option<f64>,
    },
    /// Hausdorff distances between finite sets (`x1,x2,..` or `lo:hi:n`).
    Hausdorff {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        a: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        b: Option<String>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Solve { common, control } => {
            let (config, opts) = common.load()?;
            let initial = control
                .map(|p| read_control(&p, &config.grid()?))
                .transpose()?;
            let out = commands::solve(&config, initial, &opts)?;
            let s = &out.summary;
            println!(
                "N = {}: J = {}, worst infidelity (test) = {}, best = {}, |u|^2 = {}",
                s.n, s.objective, s.test_net.worst_infidelity, s.test_net.best_infidelity, s.l2_sq
            );
            if let Some(p) = &s.pmp {
                println!(
                    "multiplier: residual = {}, support slack = {} (tol {}), {} active",
                    p.residual,
                    p.support_slack,
                    p.activation_tol,
                    p.active_set.len()
                );
            }
        }
        Command::Sweep { common, levels } => {
            let (config, opts) = common.load()?;
            let levels = match levels {
                Some(text) => parse_levels(&text)?,
                None => vec![config.net_size],
            };
            let out = commands::sweep(&config, &levels, &opts)?;
            for w in &out.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("N,max_infidelity,min_infidelity,control_l2_sq");
            for r in &out.report.rows {
                println!(
                    "{},{},{},{}",
                    r.n, r.worst_metric_test, r.best_metric_test, r.l2_sq
                );
            }
        }
        Command::Analytic { common } => {
            let (config, opts) = common.load()?;
            let out = commands::analytic(&config, &opts)?;
            println!(
                "worst infidelity (test) = {} at alpha = {}, best = {}, |u|^2 = {}",
                out.test_net.worst_infidelity,
                out.test_net.worst_alpha,
                out.test_net.best_infidelity,
                out.control.l2_norm_sq()
            );
        }
        Command::GradCheck {
            config,
            samples,
            seed,
            tamper_sign,
        } => {
            let config = RunConfig::load(&config)?;
            let out = commands::grad_check(&config, samples, seed, tamper_sign)?;
            println!(
                "max relative error over {} samples: {:e}",
                out.samples, out.max_relative_error
            );
            if !out.passed {
                return Err(CliError::Runtime(
                    "adjoint gradient disagrees with finite differences".into(),
                ));
            }
        }
        Command::PmpCheck {
            common,
            control,
            activation_tol,
        } => {
            let (config, opts) = common.load()?;
            let out = commands::pmp(&config, &control, activation_tol, &opts)?;
            let s = &out.summary;
            println!(
                "residual = {}, support slack = {} (tol {}), {} active, {} weighted",
                s.residual,
                s.support_slack,
                s.activation_tol,
                s.active_set.len(),
                s.support.len()
            );
        }
        Command::Hausdorff { config, a, b } => {
            let config = config.map(|p| RunConfig::load(&p)).transpose()?;
            let out = commands::hausdorff(config.as_ref(), a.as_deref(), b.as_deref())?;
            if let Some(d) = out.between {
                println!("{d}");
            }
            if let (Some(o), Some(t)) = (out.optimization_net_to_interval, out.test_net_to_interval)
            {
                println!("optimization net to interval: {o}");
                println!("test net to interval: {t}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
