//! Run configuration: one JSON document, every experiment constant explicit.

use std::path::{Path, PathBuf};

use ensemble_minimax::ensemble::{Control, ParamSet, TimeGrid};
use ensemble_minimax::gamma::{make_uniform_net, NetSpec};
use ensemble_minimax::qubit::{
    analytic_control, AnalyticPulseParams, QubitEnsembleSpec, TerminalFidelity,
};
use ensemble_minimax::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Two-level system with uncertain detuning `α ∈ [alpha_lo, alpha_hi]`.
    Qubit,
    /// Damped pendulum with uncertain stiffness `θ ∈ [alpha_lo, alpha_hi]`.
    Pendulum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    Squared,
    Modulus,
}

impl From<TerminalKind> for TerminalFidelity {
    fn from(k: TerminalKind) -> Self {
        match k {
            TerminalKind::Squared => TerminalFidelity::Squared,
            TerminalKind::Modulus => TerminalFidelity::Modulus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialControl {
    Zero,
    /// The explicit pulse with `eps1`, `eps2`, sampled at cell midpoints.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    #[serde(rename = "E")]
    pub energy: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub gamma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    #[serde(rename = "N")]
    pub net_size: usize,
    #[serde(rename = "test_N")]
    pub test_size: usize,
    pub tau0: f64,
    pub max_iter: usize,
    pub warmstart_iter: usize,
    pub warmstart_tau: f64,
    #[serde(default)]
    pub eps1: Option<f64>,
    #[serde(default)]
    pub eps2: Option<f64>,
    pub terminal: TerminalKind,
    pub initial_control: InitialControl,
    #[serde(default = "current_dir")]
    pub output_dir: PathBuf,
}

fn current_dir() -> PathBuf {
    PathBuf::from(".")
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            ("gamma", self.gamma),
            ("T", self.horizon),
            ("dt", self.dt),
            ("tau0", self.tau0),
            ("warmstart_tau", self.warmstart_tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.problem == ProblemKind::Qubit && !(self.energy.is_finite() && self.energy > 0.0) {
            return Err(CliError::Config(format!(
                "E must be positive, got {}",
                self.energy
            )));
        }
        if !(self.alpha_lo.is_finite()
            && self.alpha_hi.is_finite()
            && self.alpha_lo < self.alpha_hi)
        {
            return Err(CliError::Config(format!(
                "need alpha_lo < alpha_hi, got [{}, {}]",
                self.alpha_lo, self.alpha_hi
            )));
        }
        for (name, n) in [("N", self.net_size), ("test_N", self.test_size)] {
            if n < 2 {
                return Err(CliError::Config(format!(
                    "{name} must be at least 2, got {n}"
                )));
            }
        }
        self.grid()?;
        match (self.eps1, self.eps2) {
            (None, None) => {}
            (Some(_), Some(_)) => {
                self.pulse()?;
            }
            _ => {
                return Err(CliError::Config(
                    "eps1 and eps2 must be given together".into(),
                ))
            }
        }
        if self.initial_control == InitialControl::Analytic {
            if self.problem != ProblemKind::Qubit {
                return Err(CliError::Config(
                    "the analytic initial control needs the qubit problem".into(),
                ));
            }
            if self.eps1.is_none() {
                return Err(CliError::Config(
                    "the analytic initial control needs eps1 and eps2".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> CliResult<TimeGrid> {
        Ok(TimeGrid::new(self.horizon, self.dt)?)
    }

    pub fn qubit_spec(&self) -> CliResult<QubitEnsembleSpec> {
        Ok(QubitEnsembleSpec::new(
            self.energy,
            self.alpha_lo,
            self.alpha_hi,
        )?)
    }

    /// Pulse parameters, checked against the horizon `T = 1/(eps1·eps2)`.
    pub fn pulse(&self) -> CliResult<AnalyticPulseParams> {
        let (Some(e1), Some(e2)) = (self.eps1, self.eps2) else {
            return Err(CliError::Config("eps1 and eps2 are required".into()));
        };
        let p = AnalyticPulseParams::new(e1, e2)?;
        if (p.horizon() - self.horizon).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "1/(eps1*eps2) = {} does not match T = {}",
                p.horizon(),
                self.horizon
            )));
        }
        Ok(p)
    }

    pub fn net_spec(&self, points: usize) -> CliResult<NetSpec> {
        Ok(NetSpec::interval(self.alpha_lo, self.alpha_hi, points)?)
    }

    pub fn optimization_net(&self) -> CliResult<ParamSet> {
        Ok(make_uniform_net(&self.net_spec(self.net_size)?)?)
    }

    pub fn test_net(&self) -> CliResult<ParamSet> {
        Ok(make_uniform_net(&self.net_spec(self.test_size)?)?)
    }

    pub fn solver(&self, pmp: bool) -> SolverConfig {
        SolverConfig {
            gamma: self.gamma,
            tau0: self.tau0,
            max_iter: self.max_iter,
            warmstart_iter: self.warmstart_iter,
            warmstart_tau: self.warmstart_tau,
            pmp,
        }
    }

    pub fn initial(&self) -> CliResult<Control> {
        let grid = self.grid()?;
        match self.initial_control {
            InitialControl::Zero => Ok(Control::zeros(grid, 1)),
            InitialControl::Analytic => Ok(analytic_control(
                &self.pulse()?,
                &self.qubit_spec()?,
                &grid,
            )?),
        }
    }
}

/// Parses `26,51,101`.
pub fn parse_levels(text: &str) -> CliResult<Vec<usize>> {
    let levels = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad level {s:?} in {text:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if levels.is_empty() || levels.iter().any(|&n| n < 2) {
        return Err(CliError::Config(format!(
            "levels must be integers >= 2, got {text:?}"
        )));
    }
    Ok(levels)
}
