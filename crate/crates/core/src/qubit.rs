//! Two-level system with uncertain detuning.
//!
//! ```text
//! i ψ' = (H0(α) + H1 u(t)) ψ,   ψ(0) = (0, 1)ᵀ,
//! H0(α) = diag(E + α, −E − α),  H1 = σx.
//! ```
//!
//! On every control cell the Hamiltonian `d σz + u σx` (with `d = E + α`)
//! is constant, so the cell propagator is the closed-form exponential
//! `cos(Ω h) I − i sin(Ω h) (d σz + u σx) / Ω` with `Ω = √(d² + u²)`.
//! The adjoint `χ` obeys the same Schrödinger equation backward from
//! `χ(T) = −2⟨ψ_tar|ψ(T)⟩ ψ_tar`, and the cell derivatives of the cost
//! `1 − |⟨ψ_tar|ψ(T)⟩|²` are obtained by differentiating the closed-form
//! propagator exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::cost::TerminalCost;
use crate::ensemble::{Control, EnsembleProblem, ParamPoint, TimeGrid};
use crate::model::{EnsembleModel, Sensitivity};
use crate::{Error, Result};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Two complex amplitudes; physical states have unit norm, adjoint states
/// do not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState(pub [Complex64; 2]);

impl QubitState {
    pub fn new(upper: Complex64, lower: Complex64) -> Self {
        Self([upper, lower])
    }

    /// `(0, 1)ᵀ`, the initial state of every member.
    pub fn lower() -> Self {
        Self([Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
    }

    /// `ψ_tar = (1, 0)ᵀ`.
    pub fn target() -> Self {
        Self([Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)])
    }

    pub fn norm(&self) -> f64 {
        (self.0[0].norm_sqr() + self.0[1].norm_sqr()).sqrt()
    }

    /// `⟨ψ_tar|ψ⟩`, i.e. the upper amplitude.
    pub fn target_overlap(&self) -> Complex64 {
        self.0[0]
    }

    /// `⟨self|other⟩`, antilinear in the first slot.
    pub fn inner(&self, other: &QubitState) -> Complex64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self([self.0[0] * c, self.0[1] * c])
    }

    /// Real embedding `(Re ψ₁, Im ψ₁, Re ψ₂, Im ψ₂)`.
    pub fn to_real(&self) -> [f64; 4] {
        [self.0[0].re, self.0[0].im, self.0[1].re, self.0[1].im]
    }

    pub fn from_real(x: &[f64]) -> Self {
        Self([Complex64::new(x[0], x[1]), Complex64::new(x[2], x[3])])
    }
}

/// Energy gap and detuning interval `I = [α₀, α₁]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QubitEnsembleSpec {
    pub energy: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

impl QubitEnsembleSpec {
    pub fn new(energy: f64, alpha_lo: f64, alpha_hi: f64) -> Result<Self> {
        if !(energy.is_finite() && energy > 0.0) {
            return Err(Error::Config(format!(
                "energy must be positive, got {energy}"
            )));
        }
        if !(alpha_lo.is_finite() && alpha_hi.is_finite() && alpha_lo < alpha_hi) {
            return Err(Error::Config(format!(
                "detuning bounds must satisfy lo < hi, got [{alpha_lo}, {alpha_hi}]"
            )));
        }
        Ok(Self {
            energy,
            alpha_lo,
            alpha_hi,
        })
    }

    /// `d = E + α`, the diagonal entry of `H0(α)`.
    pub fn diagonal(&self, alpha: f64) -> f64 {
        self.energy + alpha
    }
}

/// Parameters of the explicit pulse family; the horizon is `1/(ε₁ε₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticPulseParams {
    pub eps1: f64,
    pub eps2: f64,
}

impl AnalyticPulseParams {
    pub fn new(eps1: f64, eps2: f64) -> Result<Self> {
        if !(eps1 > 0.0 && eps2 > 0.0 && (eps1 * eps2).is_finite()) {
            return Err(Error::Config(format!(
                "pulse parameters must be positive, got eps1 = {eps1}, eps2 = {eps2}"
            )));
        }
        Ok(Self { eps1, eps2 })
    }

    pub fn horizon(&self) -> f64 {
        1.0 / (self.eps1 * self.eps2)
    }
}

/// Coefficients of the cell propagator `c I − i s (d σz + u σx)`.
#[derive(Debug, Clone, Copy)]
struct Propagator {
    d: f64,
    u: f64,
    c: f64,
    s: f64,
}

impl Propagator {
    fn new(d: f64, u: f64, h: f64) -> Self {
        let omega = (d * d + u * u).sqrt();
        let x = omega * h;
        let (c, s) = if x.abs() < 1e-4 {
            let x2 = x * x;
            (
                1.0 - x2 / 2.0 + x2 * x2 / 24.0,
                h * (1.0 - x2 / 6.0 + x2 * x2 / 120.0),
            )
        } else {
            let (sin, cos) = x.sin_cos();
            (cos, sin / omega)
        };
        Self { d, u, c, s }
    }

    /// `(d σz + u σx) ψ`.
    fn hamiltonian(&self, psi: &QubitState) -> [Complex64; 2] {
        let [a, b] = psi.0;
        [a * self.d + b * self.u, a * self.u - b * self.d]
    }

    fn apply(&self, psi: &QubitState) -> QubitState {
        let h = self.hamiltonian(psi);
        let k = -I * self.s;
        QubitState([psi.0[0] * self.c + h[0] * k, psi.0[1] * self.c + h[1] * k])
    }
}

/// Exact one-cell propagation `exp(−i dt (H0 + H1 u)) ψ`, with
/// `e_plus_alpha = E + α`.
pub fn pauli_step(psi: &QubitState, e_plus_alpha: f64, u: f64, dt: f64) -> QubitState {
    Propagator::new(e_plus_alpha, u, dt).apply(psi)
}

/// `∂/∂u [exp(−i h (d σz + u σx))] ψ`.
fn propagator_derivative(psi: &QubitState, d: f64, u: f64, h: f64) -> QubitState {
    let p = Propagator::new(d, u, h);
    let omega2 = d * d + u * u;
    let x2 = omega2 * h * h;
    // q = (h cos(Ωh) − sin(Ωh)/Ω) / Ω²
    let q = if x2 < 1e-6 {
        h * h * h * (-1.0 / 3.0 + x2 / 30.0)
    } else {
        (h * p.c - p.s) / omega2
    };
    let hpsi = p.hamiltonian(psi);
    let sx = [psi.0[1], psi.0[0]];
    let real = -h * u * p.s;
    QubitState([
        psi.0[0] * real - I * (hpsi[0] * (u * q) + sx[0] * p.s),
        psi.0[1] * real - I * (hpsi[1] * (u * q) + sx[1] * p.s),
    ])
}

fn check_single_channel(u: &Control) -> Result<()> {
    if u.channels() != 1 {
        return Err(Error::Dimension(format!(
            "qubit controls have one channel, got {}",
            u.channels()
        )));
    }
    Ok(())
}

/// Forward path `ψ(t_m)`, `m = 0..=M`.
pub fn simulate_qubit(
    spec: &QubitEnsembleSpec,
    alpha: f64,
    u: &Control,
) -> Result<Vec<QubitState>> {
    check_single_channel(u)?;
    let d = spec.diagonal(alpha);
    let dt = u.grid().dt();
    let mut path = Vec::with_capacity(u.grid().cells() + 1);
    let mut psi = QubitState::lower();
    path.push(psi);
    for &um in u.values().column(0) {
        psi = pauli_step(&psi, d, um, dt);
        path.push(psi);
    }
    Ok(path)
}

/// `ψ(T)` without storing the path.
pub fn qubit_terminal(spec: &QubitEnsembleSpec, alpha: f64, u: &Control) -> Result<QubitState> {
    check_single_channel(u)?;
    let d = spec.diagonal(alpha);
    let dt = u.grid().dt();
    Ok(u.values()
        .column(0)
        .iter()
        .fold(QubitState::lower(), |psi, &um| pauli_step(&psi, d, um, dt)))
}

/// Adjoint path `χ(t_m)`, propagated backward from
/// `χ(T) = −2⟨ψ_tar|ψ(T)⟩ ψ_tar`.
pub fn simulate_qubit_adjoint(
    spec: &QubitEnsembleSpec,
    alpha: f64,
    u: &Control,
    psi_t: &QubitState,
) -> Result<Vec<QubitState>> {
    check_single_channel(u)?;
    let d = spec.diagonal(alpha);
    let dt = u.grid().dt();
    let cells = u.grid().cells();
    let mut path = vec![QubitState::lower(); cells + 1];
    let mut chi = QubitState::target().scale(psi_t.target_overlap() * -2.0);
    path[cells] = chi;
    for m in (0..cells).rev() {
        // U† = exp(+i dt H)
        chi = pauli_step(&chi, d, u.values()[[m, 0]], -dt);
        path[m] = chi;
    }
    Ok(path)
}

/// `Im⟨χ|H1|ψ⟩` at a single instant.
pub fn pointwise_coupling(chi: &QubitState, psi: &QubitState) -> f64 {
    let h1psi = QubitState([psi.0[1], psi.0[0]]);
    chi.inner(&h1psi).im
}

/// Cell derivatives of `1 − |⟨ψ_tar|ψ(T)⟩|²` divided by `dt`, together
/// with the terminal state. This is the exact discrete counterpart of
/// `Im⟨χ(t)|H1|ψ(t)⟩`.
pub fn cost_gradient_density(
    spec: &QubitEnsembleSpec,
    alpha: f64,
    u: &Control,
) -> Result<(Vec<f64>, QubitState)> {
    terminal_gradient_density(spec, alpha, u, TerminalFidelity::Squared)
}

/// As [`cost_gradient_density`] for either terminal form. For the modulus
/// form the seed is `χ(T) = −(z/|z|) ψ_tar` with `z = ⟨ψ_tar|ψ(T)⟩`; it is
/// taken as zero when `z = 0`, where `1 − |z|` has no derivative.
pub fn terminal_gradient_density(
    spec: &QubitEnsembleSpec,
    alpha: f64,
    u: &Control,
    form: TerminalFidelity,
) -> Result<(Vec<f64>, QubitState)> {
    let path = simulate_qubit(spec, alpha, u)?;
    let psi_t = *path.last().expect("non-empty path");
    let d = spec.diagonal(alpha);
    let dt = u.grid().dt();
    let cells = u.grid().cells();
    let mut grad = vec![0.0; cells];
    let mut chi = QubitState::target().scale(form.seed(psi_t.target_overlap()));
    for m in (0..cells).rev() {
        let um = u.values()[[m, 0]];
        let dpsi = propagator_derivative(&path[m], d, um, dt);
        grad[m] = chi.inner(&dpsi).re / dt;
        chi = pauli_step(&chi, d, um, -dt);
    }
    Ok((grad, psi_t))
}

/// Which fidelity loss the qubit model optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalFidelity {
    /// `1 − |⟨ψ_tar|ψ(T)⟩|²`
    #[default]
    Squared,
    /// `1 − |⟨ψ_tar|ψ(T)⟩|`
    Modulus,
}

impl TerminalFidelity {
    fn seed(self, z: Complex64) -> Complex64 {
        match self {
            Self::Squared => z * -2.0,
            Self::Modulus if z.norm() > 0.0 => -z / z.norm(),
            Self::Modulus => Complex64::new(0.0, 0.0),
        }
    }

    /// Loss value for an overlap modulus.
    pub fn value(self, overlap: f64) -> f64 {
        let (sq, modulus) = fidelity_from_overlap(overlap);
        match self {
            Self::Squared => sq,
            Self::Modulus => modulus,
        }
    }

    /// Infidelity `1 − |overlap|` recovered from a loss value.
    pub fn infidelity(self, cost: f64) -> f64 {
        match self {
            Self::Squared => infidelity_from_cost_sq(cost),
            Self::Modulus => cost,
        }
    }
}

/// `(1 − |⟨ψ_tar|ψ(T)⟩|², 1 − |⟨ψ_tar|ψ(T)⟩|)`.
pub fn fidelity_cost(psi_t: &QubitState) -> Result<(f64, f64)> {
    let norm = psi_t.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::ContractViolation(format!(
            "terminal state has norm {norm}, expected 1"
        )));
    }
    Ok(fidelity_from_overlap(psi_t.target_overlap().norm()))
}

fn fidelity_from_overlap(overlap: f64) -> (f64, f64) {
    let overlap = overlap.clamp(0.0, 1.0);
    (1.0 - overlap * overlap, 1.0 - overlap)
}

/// Infidelity `1 − |overlap|` recovered from `1 − |overlap|²`.
pub fn infidelity_from_cost_sq(cost_sq: f64) -> f64 {
    1.0 - (1.0 - cost_sq).clamp(0.0, 1.0).sqrt()
}

/// The explicit pulse evaluated at time `t`.
pub fn analytic_pulse(params: &AnalyticPulseParams, spec: &QubitEnsembleSpec, t: f64) -> f64 {
    let AnalyticPulseParams { eps1, eps2 } = *params;
    let (a0, a1) = (spec.alpha_lo, spec.alpha_hi);
    let rate = PI * eps1 * eps2;
    let envelope = 2.0 * eps1 * (1.0 - (2.0 * rate * t).cos());
    let phase = 2.0 * spec.energy * t + (a0 - a1) * (rate * t).sin() / rate + (a0 + a1) * t;
    envelope * phase.cos()
}

/// Samples the explicit pulse at cell midpoints; the grid horizon must be
/// `1/(ε₁ε₂)` to within `10⁻⁹`.
pub fn analytic_control(
    params: &AnalyticPulseParams,
    spec: &QubitEnsembleSpec,
    grid: &TimeGrid,
) -> Result<Control> {
    if (grid.horizon() - params.horizon()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "pulse horizon 1/(eps1*eps2) = {} does not match T = {}",
            params.horizon(),
            grid.horizon()
        )));
    }
    let values = (0..grid.cells())
        .map(|m| analytic_pulse(params, spec, grid.cell_midpoint(m)))
        .collect();
    Control::from_scalar_cells(*grid, values)
}

/// Native exact-exponential model: parameters are scalars `α`, the
/// terminal cost is `1 − |⟨ψ_tar|ψ(T)⟩|²` unless another form is chosen.
#[derive(Debug, Clone, Copy)]
pub struct QubitModel {
    pub spec: QubitEnsembleSpec,
    pub terminal: TerminalFidelity,
}

impl QubitModel {
    pub fn new(spec: QubitEnsembleSpec) -> Self {
        Self {
            spec,
            terminal: TerminalFidelity::Squared,
        }
    }

    pub fn with_terminal(spec: QubitEnsembleSpec, terminal: TerminalFidelity) -> Self {
        Self { spec, terminal }
    }
}

impl EnsembleModel for QubitModel {
    fn control_dim(&self) -> usize {
        1
    }

    fn terminal_cost(&self, theta: &ParamPoint, u: &Control) -> Result<f64> {
        let psi = qubit_terminal(&self.spec, theta.first(), u)?;
        Ok(self.terminal.value(psi.target_overlap().norm()))
    }

    fn sensitivity(&self, theta: &ParamPoint, u: &Control) -> Result<Sensitivity> {
        let (grad, psi_t) = terminal_gradient_density(&self.spec, theta.first(), u, self.terminal)?;
        let cells = grad.len();
        let coupling =
            ndarray::Array2::from_shape_vec((cells, 1), grad.into_iter().map(|g| -g).collect())
                .expect("one column per cell");
        Ok(Sensitivity {
            cost: self.terminal.value(psi_t.target_overlap().norm()),
            coupling,
        })
    }

    fn report_metric(&self, cost: f64) -> f64 {
        self.terminal.infidelity(cost)
    }
}

/// The qubit written as a real 4-dimensional control-affine system, for
/// cross-checking the native path against the generic RK4 machinery.
/// Parameters are scalars `α`.
#[derive(Debug, Clone, Copy)]
pub struct QubitEmbedding {
    pub spec: QubitEnsembleSpec,
}

impl EnsembleProblem for QubitEmbedding {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        let d = self.spec.diagonal(theta.first());
        out.copy_from_slice(&[d * x[1], -d * x[0], -d * x[3], d * x[2]]);
    }

    fn control_field(&self, _: usize, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.copy_from_slice(&[x[3], -x[2], x[1], -x[0]]);
    }

    fn drift_jacobian(&self, _: &[f64], theta: &ParamPoint, out: &mut [f64]) {
        let d = self.spec.diagonal(theta.first());
        #[rustfmt::skip]
        out.copy_from_slice(&[
            0.0, d, 0.0, 0.0,
            -d, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -d,
            0.0, 0.0, d, 0.0,
        ]);
    }

    fn control_field_jacobian(&self, _: usize, _: &[f64], _: &ParamPoint, out: &mut [f64]) {
        #[rustfmt::skip]
        out.copy_from_slice(&[
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            -1.0, 0.0, 0.0, 0.0,
        ]);
    }

    fn initial_state(&self, _: &ParamPoint) -> Vec<f64> {
        QubitState::lower().to_real().to_vec()
    }
}

/// `1 − x₀² − x₁²` on the real embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddedFidelityCost;

impl TerminalCost for EmbeddedFidelityCost {
    fn value(&self, x: &[f64], _: &ParamPoint) -> f64 {
        (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0)
    }

    fn gradient(&self, x: &[f64], _: &ParamPoint, out: &mut [f64]) {
        out.copy_from_slice(&[-2.0 * x[0], -2.0 * x[1], 0.0, 0.0]);
    }
}
