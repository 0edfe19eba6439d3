//! Classical oscillator bath coupled to both photon quadratures.
//!
//! Oscillators have unit mass, frequencies ω_k = kΔ and couplings
//! C_k = A (kΔ)^a. They feel the Ehrenfest force C_k ⟨(b†+b) + (b′†+b′)⟩
//! and feed back f(t) = Σ C_k x_k into the quantum Hamiltonian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub n_osc: usize,
    /// Spectral amplitude A.
    pub amplitude: f64,
    /// Spectral exponent a.
    pub exponent: f64,
    /// Frequency spacing Δ.
    pub delta: f64,
}

impl Default for BathParams {
    fn default() -> Self {
        BathParams {
            n_osc: 1000,
            amplitude: 0.01,
            exponent: 0.6,
            delta: 0.01,
        }
    }
}

impl BathParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_osc == 0 {
            return Err(Error::InvalidParameter {
                name: "n_osc",
                reason: "need at least one oscillator".into(),
            });
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("must be positive, got {}", self.delta),
            });
        }
        if !(self.amplitude >= 0.0) || !self.exponent.is_finite() {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                reason: format!("must be >= 0, got {}", self.amplitude),
            });
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (1..=self.n_osc).map(|k| k as f64 * self.delta).collect()
    }
}

/// C_k = A (kΔ)^a for k = 1..N_B.
pub fn coupling_constants(params: &BathParams) -> Vec<f64> {
    (1..=params.n_osc)
        .map(|k| params.amplitude * (k as f64 * params.delta).powf(params.exponent))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BathState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl BathState {
    /// All oscillators at rest at the origin.
    pub fn at_rest(n: usize) -> Self {
        BathState {
            x: vec![0.0; n],
            p: vec![0.0; n],
            t: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bath {
    pub omega: Vec<f64>,
    pub coupling: Vec<f64>,
    pub state: BathState,
}

impl Bath {
    pub fn new(params: &BathParams) -> Result<Self> {
        params.validate()?;
        Ok(Bath {
            omega: params.frequencies(),
            coupling: coupling_constants(params),
            state: BathState::at_rest(params.n_osc),
        })
    }

    /// Bath from explicit frequencies and couplings (tests, diagnostics).
    pub fn from_parts(omega: Vec<f64>, coupling: Vec<f64>, state: BathState) -> Self {
        Bath { omega, coupling, state }
    }

    /// f(t) = Σ C_k x_k
    pub fn feedback(&self) -> f64 {
        bath_feedback_term(&self.coupling, &self.state)
    }

    /// f at the half step, from the drift x + p·dt/2 of the next Verlet step.
    pub fn midpoint_feedback(&self, dt: f64) -> f64 {
        self.coupling
            .iter()
            .zip(self.state.x.iter().zip(&self.state.p))
            .map(|(c, (x, p))| c * (x + 0.5 * dt * p))
            .sum()
    }

    /// One Verlet step under the harmonic force plus the constant coupling
    /// force C_k · `force_input` held over the step.
    pub fn verlet_step(&mut self, force_input: f64, dt: f64) {
        verlet_step(&mut self.state, &self.omega, &self.coupling, force_input, dt);
    }

    /// ½ Σ (p_k² + ω_k² x_k²)
    pub fn energy(&self) -> f64 {
        self.state
            .x
            .iter()
            .zip(&self.state.p)
            .zip(&self.omega)
            .map(|((x, p), w)| 0.5 * (p * p + w * w * x * x))
            .sum()
    }

    /// −f ⟨(b†+b) + (b′†+b′)⟩
    pub fn coupling_energy(&self, quadratures: f64) -> f64 {
        -self.feedback() * quadratures
    }
}

pub fn bath_feedback_term(coupling: &[f64], state: &BathState) -> f64 {
    coupling.iter().zip(&state.x).map(|(c, x)| c * x).sum()
}

/// Position (drift-kick-drift) Verlet:
/// x ← x + p dt/2; p ← p + dt(−ω²x + C F); x ← x + p dt/2.
pub fn verlet_step(state: &mut BathState, omega: &[f64], coupling: &[f64], force_input: f64, dt: f64) {
    let half = 0.5 * dt;
    for (((x, p), w), c) in state.x.iter_mut().zip(state.p.iter_mut()).zip(omega).zip(coupling) {
        *x += half * *p;
        *p += dt * (-w * w * *x + c * force_input);
        *x += half * *p;
    }
    state.t += dt;
}
