//! Built-in smooth test problems for the generic RK4 path.

use crate::cost::TerminalCost;
use crate::ensemble::{EnsembleProblem, ParamPoint};

/// Damped pendulum with uncertain stiffness `θ` and a state-dependent
/// actuator:
///
/// ```text
/// q' = p
/// p' = −θ sin q − c p + (1 + κ cos q) u
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    pub damping: f64,
    pub actuator_coupling: f64,
    pub initial_angle: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            damping: 0.1,
            actuator_coupling: 0.5,
            initial_angle: 1.0,
        }
    }
}

impl EnsembleProblem for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        out[0] = x[1];
        out[1] = -theta.first() * x[0].sin() - self.damping * x[1];
    }

    fn control_field(&self, _: usize, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0 + self.actuator_coupling * x[0].cos();
    }

    fn drift_jacobian(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 1.0, -theta.first() * x[0].cos(), -self.damping]);
    }

    fn control_field_jacobian(&self, _: usize, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 0.0, -self.actuator_coupling * x[0].sin(), 0.0]);
    }

    fn initial_state(&self, _: &ParamPoint) -> Vec<f64> {
        vec![self.initial_angle, 0.0]
    }
}

/// Pendulum energy-like terminal cost `½ p² + (1 − cos q)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PendulumEnergy;

impl TerminalCost for PendulumEnergy {
    fn value(&self, x: &[f64], _: &ParamPoint) -> f64 {
        0.5 * x[1] * x[1] + (1.0 - x[0].cos())
    }

    fn gradient(&self, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out[0] = x[0].sin();
        out[1] = x[1];
    }
}
