//! Matrix-free Hamiltonian of the molecule + cavity + fluorescence mode.
//!
//! Two-electron dimer states are c†_{i↑} c†_{j↓}|vac⟩ in the order
//! (1↑1↓, 1↑2↓, 2↑1↓, 2↑2↓). With this ordering every hopping matrix element
//! of Σσ(c†₁σc₂σ + h.c.) is +1, and every 4×4 operator below follows from it.
//! The two-level system uses |0⟩, |1⟩ with energies 0 and `gap`.

use nalgebra::{Matrix4, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, StateVector, C64};

/// Above this dimension the Hamiltonian apply is split across rayon workers.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MolecularParams {
    /// Atomic mass M; the relative coordinate has reduced mass M/2.
    pub mass: f64,
    /// Strength C of the C/x⁴ inter-atomic repulsion.
    pub repulsion: f64,
    /// On-site repulsion U.
    pub onsite_u: f64,
    /// Bare hopping V.
    pub hopping: f64,
    /// Attenuation λ of the hopping, V e^{-λx}.
    pub attenuation: f64,
    /// Bond length used when the grid has a single point.
    pub r_fixed: f64,
}

impl Default for MolecularParams {
    fn default() -> Self {
        MolecularParams {
            mass: 8.0e4,
            repulsion: 0.6,
            onsite_u: 1.0,
            hopping: -2.0,
            attenuation: 0.6,
            r_fixed: 1.156,
        }
    }
}

impl MolecularParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("repulsion", self.repulsion),
            ("attenuation", self.attenuation),
            ("r_fixed", self.r_fixed),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if !self.onsite_u.is_finite() || !self.hopping.is_finite() {
            return Err(Error::InvalidParameter {
                name: "onsite_u/hopping",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }

    /// V e^{-λx}
    pub fn effective_hopping(&self, x: f64) -> f64 {
        self.hopping * (-self.attenuation * x).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiationParams {
    /// Cavity frequency ω₀.
    pub omega0: f64,
    /// Fluorescence frequency ω′ (the scanned variable).
    pub omega_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub g_c: f64,
    pub g_f: f64,
    /// Damping rate Γ of the fluorescence coupling; 0 disables it.
    pub gamma: f64,
    pub bath_enabled: bool,
}

impl CouplingParams {
    /// g′(t) = g_f e^{-Γt}
    pub fn flu_coupling(&self, t: f64) -> f64 {
        if self.gamma == 0.0 {
            self.g_f
        } else {
            self.g_f * (-self.gamma * t).exp()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_f >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "g_f",
                reason: format!("must be >= 0, got {}", self.g_f),
            });
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be >= 0, got {}", self.gamma),
            });
        }
        if !self.g_c.is_finite() {
            return Err(Error::InvalidParameter {
                name: "g_c",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvelopeMode {
    /// Linear ramp on [0, t1], flat until t2, then off.
    Trapezoid { t1: f64, t2: f64 },
    /// Constant amplitude on [0, ts).
    Sudden { ts: f64 },
}

/// Classical pump E(t) cos(ω₀ t) (b† + b) on the cavity mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveEnvelope {
    pub amplitude: f64,
    pub mode: EnvelopeMode,
    pub carrier: f64,
}

impl DriveEnvelope {
    pub fn envelope(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self.mode {
            EnvelopeMode::Trapezoid { t1, t2 } => {
                if t > t2 {
                    0.0
                } else if t < t1 {
                    self.amplitude * t / t1
                } else {
                    self.amplitude
                }
            }
            EnvelopeMode::Sudden { ts } => {
                if t < ts {
                    self.amplitude
                } else {
                    0.0
                }
            }
        }
    }

    /// E(t) cos(ω₀ t)
    pub fn field(&self, t: f64) -> f64 {
        let e = self.envelope(t);
        if e == 0.0 {
            0.0
        } else {
            e * (self.carrier * t).cos()
        }
    }

    pub fn off_time(&self) -> f64 {
        match self.mode {
            EnvelopeMode::Trapezoid { t2, .. } => t2,
            EnvelopeMode::Sudden { ts } => ts,
        }
    }

    /// Times where the envelope has a kink or jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.mode {
            EnvelopeMode::Trapezoid { t1, t2 } => vec![t1, t2],
            EnvelopeMode::Sudden { ts } => vec![ts],
        }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        DriveEnvelope { amplitude, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElectronicModel {
    Dimer(MolecularParams),
    Tls { gap: f64 },
}

impl ElectronicModel {
    pub fn n_elec(&self) -> usize {
        match self {
            ElectronicModel::Dimer(_) => 4,
            ElectronicModel::Tls { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElectronicModel::Dimer(_) => "dimer",
            ElectronicModel::Tls { .. } => "two-level system",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ElectronicModel::Dimer(p) => p.validate(),
            ElectronicModel::Tls { gap } => {
                if *gap > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "gap",
                        reason: format!("must be positive, got {gap}"),
                    })
                }
            }
        }
    }

    /// Dipole operator M̂ on the electronic index.
    pub fn dipole_matrix(&self) -> Vec<[f64; 4]> {
        match self {
            // Σσ(c†_b c_a + h.c.) = Σσ(n₁σ − n₂σ)
            ElectronicModel::Dimer(_) => vec![
                [2.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, -2.0],
            ],
            ElectronicModel::Tls { .. } => vec![[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
        }
    }

    /// Occupation of the upper one-electron orbital (dimer) or of |1⟩ (TLS).
    ///
    /// The hopping term −V e^{-λx}Σσ(c†₁σc₂σ + h.c.) puts (c₁ + c₂)/√2 above
    /// (c₁ − c₂)/√2 when V < 0, so the upper orbital follows the sign of V.
    pub fn excited_number_matrix(&self) -> Vec<[f64; 4]> {
        match self {
            ElectronicModel::Dimer(p) if p.hopping < 0.0 => DIMER_BONDING_NUMBER.to_vec(),
            ElectronicModel::Dimer(_) => DIMER_ANTIBONDING_NUMBER.to_vec(),
            ElectronicModel::Tls { .. } => vec![[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
        }
    }
}

/// Σσ(c†₁σc₂σ + h.c.) in the dimer basis.
pub const DIMER_HOPPING: [[f64; 4]; 4] = [
    [0.0, 1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0, 0.0],
];

/// Ŝ² in the S_z = 0 two-electron sector.
/// Σσ c†_{bσ}c_{bσ} = 1 + T/2 with c_b = (c₁ + c₂)/√2.
pub const DIMER_BONDING_NUMBER: [[f64; 4]; 4] = [
    [1.0, 0.5, 0.5, 0.0],
    [0.5, 1.0, 0.0, 0.5],
    [0.5, 0.0, 1.0, 0.5],
    [0.0, 0.5, 0.5, 1.0],
];

/// Σσ c†_{aσ}c_{aσ} = 1 − T/2 with c_a = (c₁ − c₂)/√2.
pub const DIMER_ANTIBONDING_NUMBER: [[f64; 4]; 4] = [
    [1.0, -0.5, -0.5, 0.0],
    [-0.5, 1.0, 0.0, -0.5],
    [-0.5, 0.0, 1.0, -0.5],
    [0.0, -0.5, -0.5, 1.0],
];

pub const DIMER_SPIN_SQUARED: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, -1.0, 0.0],
    [0.0, -1.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0],
];

/// Site exchange 1 ↔ 2.
pub const DIMER_SITE_PARITY: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
];

const DIMER_NEIGHBORS: [[usize; 2]; 4] = [[1, 2], [0, 3], [0, 3], [1, 2]];

/// Electronic block U Σn↑n↓ − V_eff Σσ(c†₁σc₂σ + h.c.) at a frozen bond length.
pub fn dimer_block(v_eff: f64, u: f64) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = u;
    m[(3, 3)] = u;
    for (i, row) in DIMER_HOPPING.iter().enumerate() {
        for (k, &h) in row.iter().enumerate() {
            m[(i, k)] += -v_eff * h;
        }
    }
    m
}

/// Eigenvalues of [`dimer_block`] in ascending order.
pub fn dimer_block_eigenvalues(v_eff: f64, u: f64) -> [f64; 4] {
    let eig = SymmetricEigen::new(dimer_block(v_eff, u));
    let mut ev = [0.0; 4];
    ev.copy_from_slice(eig.eigenvalues.as_slice());
    ev.sort_by(f64::total_cmp);
    ev
}

/// Many-body resonance Ω_R = U/2 + √(4V_eff² + (U/2)²).
pub fn resonance_frequency(u: f64, v_eff: f64) -> f64 {
    0.5 * u + (4.0 * v_eff * v_eff + 0.25 * u * u).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElectronicLevel {
    pub energy: f64,
    pub parity: Parity,
    /// Total spin S (0 or 1).
    pub spin: u8,
}

/// Closed-form dimer levels: even ground singlet, odd triplet at 0, odd
/// singlet at U, even upper singlet.
pub fn electronic_eigs_analytic(t_hop: f64, u: f64) -> [ElectronicLevel; 4] {
    let root = (4.0 * t_hop * t_hop + 0.25 * u * u).sqrt();
    [
        ElectronicLevel {
            energy: 0.5 * u - root,
            parity: Parity::Even,
            spin: 0,
        },
        ElectronicLevel {
            energy: 0.0,
            parity: Parity::Odd,
            spin: 1,
        },
        ElectronicLevel {
            energy: u,
            parity: Parity::Odd,
            spin: 0,
        },
        ElectronicLevel {
            energy: 0.5 * u + root,
            parity: Parity::Even,
            spin: 0,
        },
    ]
}

/// Born-Oppenheimer diagnostic: C/x⁴ plus the lowest electronic eigenvalue
/// at hopping V e^{-λx}.
pub fn bo_surface(x: &[f64], params: &MolecularParams) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            params.repulsion / xi.powi(4) + dimer_block_eigenvalues(params.effective_hopping(xi), params.onsite_u)[0]
        })
        .collect()
}

/// Applies a small electronic matrix ⊗ identity on the photon and grid axes.
pub fn apply_electronic(space: &HilbertSpace, matrix: &[[f64; 4]], input: &[C64], out: &mut [C64]) {
    let n_elec = space.shape().n_elec;
    let block = space.dim() / n_elec;
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    for (l, row) in matrix.iter().enumerate().take(n_elec) {
        let o = &mut out[l * block..(l + 1) * block];
        for (l2, &c) in row.iter().enumerate().take(n_elec) {
            if c != 0.0 {
                let x = &input[l2 * block..(l2 + 1) * block];
                o.iter_mut().zip(x).for_each(|(o, x)| *o += c * x);
            }
        }
    }
}

/// M̂ |state⟩
pub fn apply_dipole(space: &HilbertSpace, model: &ElectronicModel, state: &StateVector) -> Result<StateVector> {
    check_model(space, model)?;
    space.check(state)?;
    let mut out = space.zeros();
    apply_electronic(space, &model.dipole_matrix(), &state.amplitudes, &mut out.amplitudes);
    Ok(out)
}

/// Ŝ² |state⟩ on a dimer space.
pub fn spin_squared(space: &HilbertSpace, state: &StateVector) -> Result<StateVector> {
    if space.shape().n_elec != 4 {
        return Err(Error::WrongModel {
            required: "dimer",
            found: "two-level system",
        });
    }
    space.check(state)?;
    let mut out = space.zeros();
    apply_electronic(space, &DIMER_SPIN_SQUARED, &state.amplitudes, &mut out.amplitudes);
    Ok(out)
}

fn check_model(space: &HilbertSpace, model: &ElectronicModel) -> Result<()> {
    if space.shape().n_elec != model.n_elec() {
        return Err(Error::WrongModel {
            required: model.name(),
            found: if space.shape().n_elec == 4 {
                "dimer"
            } else {
                "two-level system"
            },
        });
    }
    if let ElectronicModel::Tls { .. } = model {
        if !space.shape().is_rigid() {
            return Err(Error::InvalidShape(
                "the two-level system has no nuclear coordinate; use n_grid = 1".into(),
            ));
        }
    }
    Ok(())
}

/// Which Hamiltonian terms an apply includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub molecular: bool,
    pub radiation: bool,
    pub interaction: bool,
    /// Classical drive and bath fields.
    pub external: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        molecular: true,
        radiation: true,
        interaction: true,
        external: true,
    };
    /// H_s = H_mol + H_rad + H_int
    pub const SYSTEM: Terms = Terms {
        molecular: true,
        radiation: true,
        interaction: true,
        external: false,
    };
    pub const NONE: Terms = Terms {
        molecular: false,
        radiation: false,
        interaction: false,
        external: false,
    };
}

/// Scalar, time-dependent coefficients frozen for one apply.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldCoefficients {
    /// g′(t) multiplying M̂ (b′† + b′).
    pub flu_coupling: f64,
    /// E(t) cos(ω₀t) multiplying (b† + b).
    pub drive: f64,
    /// f(t) = Σ C_k x_k; enters as −f[(b† + b) + (b′† + b′)].
    pub bath: f64,
}

impl FieldCoefficients {
    pub fn at(coupling: &CouplingParams, drive: Option<&DriveEnvelope>, bath: f64, t: f64) -> Self {
        FieldCoefficients {
            flu_coupling: coupling.flu_coupling(t),
            drive: drive.map_or(0.0, |d| d.field(t)),
            bath,
        }
    }
}

/// Precomputed coefficients of the full Hamiltonian on one space.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    space: HilbertSpace,
    model: ElectronicModel,
    radiation: RadiationParams,
    coupling: CouplingParams,
    elec_diag: [f64; 4],
    /// −V e^{-λ x_j}, one entry per grid point.
    hop: Vec<f64>,
    /// C/x_j⁴ + 2κ per grid point (zero when rigid).
    nuclear_diag: Vec<f64>,
    /// κ = 1/(M Δx²); finite-difference weight of p̂²/M.
    kinetic: f64,
    dipole: Vec<[f64; 4]>,
    sqrt: Vec<f64>,
}

impl Hamiltonian {
    pub fn new(
        space: HilbertSpace,
        model: ElectronicModel,
        radiation: RadiationParams,
        coupling: CouplingParams,
    ) -> Result<Self> {
        model.validate()?;
        coupling.validate()?;
        check_model(&space, &model)?;
        let shape = *space.shape();
        let ng = shape.n_grid;
        let (elec_diag, hop, nuclear_diag, kinetic) = match &model {
            ElectronicModel::Dimer(p) => {
                let u = p.onsite_u;
                if shape.is_rigid() {
                    ([u, 0.0, 0.0, u], vec![-p.effective_hopping(p.r_fixed)], vec![0.0], 0.0)
                } else {
                    let kin = 1.0 / (p.mass * space.dx() * space.dx());
                    let hop = space.grid().iter().map(|&x| -p.effective_hopping(x)).collect();
                    let nuc = space
                        .grid()
                        .iter()
                        .map(|&x| p.repulsion / x.powi(4) + 2.0 * kin)
                        .collect();
                    ([u, 0.0, 0.0, u], hop, nuc, kin)
                }
            }
            ElectronicModel::Tls { gap } => ([0.0, *gap, 0.0, 0.0], vec![0.0; ng], vec![0.0; ng], 0.0),
        };
        let nmax = shape.n_cav.max(shape.n_flu) + 1;
        let sqrt = (0..nmax).map(|k| (k as f64).sqrt()).collect();
        Ok(Hamiltonian {
            dipole: model.dipole_matrix(),
            space,
            model,
            radiation,
            coupling,
            elec_diag,
            hop,
            nuclear_diag,
            kinetic,
            sqrt,
        })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn model(&self) -> &ElectronicModel {
        &self.model
    }

    pub fn radiation(&self) -> &RadiationParams {
        &self.radiation
    }

    pub fn coupling(&self) -> &CouplingParams {
        &self.coupling
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// out = H(coeffs)|input⟩ restricted to `terms`.
    pub fn apply(&self, coeffs: &FieldCoefficients, terms: Terms, input: &[C64], out: &mut [C64]) {
        let s = self.space.shape();
        let slab = s.n_flu * s.n_grid;
        assert_eq!(input.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        if self.dim() >= PAR_THRESHOLD {
            out.par_chunks_mut(slab)
                .enumerate()
                .for_each(|(k, o)| self.apply_slab(coeffs, terms, input, k, o));
        } else {
            out.chunks_mut(slab)
                .enumerate()
                .for_each(|(k, o)| self.apply_slab(coeffs, terms, input, k, o));
        }
    }

    /// One (λ, n) slab of the output: all fluorescence occupations and grid points.
    fn apply_slab(&self, c: &FieldCoefficients, terms: Terms, input: &[C64], slab: usize, out: &mut [C64]) {
        let s = self.space.shape();
        let (nc, nf, ng, ne) = (s.n_cav, s.n_flu, s.n_grid, s.n_elec);
        let lambda = slab / nc;
        let n = slab % nc;
        let block = |l: usize, n: usize, m: usize| {
            let start = ((l * nc + n) * nf + m) * ng;
            &input[start..start + ng]
        };
        let dimer = matches!(self.model, ElectronicModel::Dimer(_));

        for m in 0..nf {
            let o = &mut out[m * ng..(m + 1) * ng];
            let x = block(lambda, n, m);

            let mut shift = 0.0;
            if terms.molecular {
                shift += self.elec_diag[lambda];
            }
            if terms.radiation {
                shift += self.radiation.omega0 * n as f64 + self.radiation.omega_f * m as f64;
            }
            if terms.molecular && ng > 1 {
                for ((o, x), d) in o.iter_mut().zip(x).zip(&self.nuclear_diag) {
                    *o = (shift + d) * x;
                }
            } else {
                o.iter_mut().zip(x).for_each(|(o, x)| *o = shift * x);
            }

            if terms.molecular {
                if dimer {
                    for &l2 in &DIMER_NEIGHBORS[lambda] {
                        let y = block(l2, n, m);
                        if ng == 1 {
                            o[0] += self.hop[0] * y[0];
                        } else {
                            for ((o, y), h) in o.iter_mut().zip(y).zip(&self.hop) {
                                *o += h * y;
                            }
                        }
                    }
                }
                if ng > 1 {
                    let k = self.kinetic;
                    o[0] -= k * x[1];
                    for j in 1..ng - 1 {
                        o[j] -= k * (x[j - 1] + x[j + 1]);
                    }
                    o[ng - 1] -= k * x[ng - 2];
                }
            }

            for l2 in 0..ne {
                let d = self.dipole[lambda][l2];
                let same = l2 == lambda;

                let mut a_cav = 0.0;
                let mut a_flu = 0.0;
                if terms.interaction {
                    a_cav += self.coupling.g_c * d;
                    a_flu += c.flu_coupling * d;
                }
                if terms.external && same {
                    a_cav += c.drive - c.bath;
                    a_flu -= c.bath;
                }

                if a_cav != 0.0 {
                    if n > 0 {
                        let w = a_cav * self.sqrt[n];
                        axpy(o, w, block(l2, n - 1, m));
                    }
                    if n + 1 < nc {
                        let w = a_cav * self.sqrt[n + 1];
                        axpy(o, w, block(l2, n + 1, m));
                    }
                }
                if a_flu != 0.0 {
                    if m > 0 {
                        let w = a_flu * self.sqrt[m];
                        axpy(o, w, block(l2, n, m - 1));
                    }
                    if m + 1 < nf {
                        let w = a_flu * self.sqrt[m + 1];
                        axpy(o, w, block(l2, n, m + 1));
                    }
                }
            }
        }
    }

    /// Operator view with the given coefficients frozen.
    pub fn frozen(&self, coeffs: FieldCoefficients, terms: Terms) -> FrozenHamiltonian<'_> {
        FrozenHamiltonian {
            ham: self,
            coeffs,
            terms,
        }
    }

    /// ⟨ψ|H|ψ⟩ (real for Hermitian H).
    pub fn expectation(&self, coeffs: &FieldCoefficients, terms: Terms, psi: &[C64]) -> f64 {
        let mut tmp = vec![C64::new(0.0, 0.0); psi.len()];
        self.apply(coeffs, terms, psi, &mut tmp);
        crate::hilbert::inner(psi, &tmp).re
    }

    fn apply_terms(&self, coeffs: FieldCoefficients, terms: Terms, state: &StateVector) -> Result<StateVector> {
        self.space.check(state)?;
        let mut out = self.space.zeros();
        self.apply(&coeffs, terms, &state.amplitudes, &mut out.amplitudes);
        Ok(out)
    }

    /// H_mol |state⟩: kinetic + C/x⁴ + Hubbard + distance-dependent hopping.
    pub fn apply_h_mol(&self, state: &StateVector) -> Result<StateVector> {
        let terms = Terms {
            molecular: true,
            ..Terms::NONE
        };
        self.apply_terms(FieldCoefficients::default(), terms, state)
    }

    /// (ω₀ b†b + ω′ b′†b′)|state⟩
    pub fn apply_h_rad(&self, state: &StateVector) -> Result<StateVector> {
        let terms = Terms {
            radiation: true,
            ..Terms::NONE
        };
        self.apply_terms(FieldCoefficients::default(), terms, state)
    }

    /// M̂[g_c(b†+b) + g′(t)(b′†+b′)]|state⟩
    pub fn apply_h_int(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        let coeffs = FieldCoefficients {
            flu_coupling: self.coupling.flu_coupling(t),
            ..Default::default()
        };
        let terms = Terms {
            interaction: true,
            ..Terms::NONE
        };
        self.apply_terms(coeffs, terms, state)
    }

    /// E(t) cos(ω₀t)(b†+b)|state⟩
    pub fn apply_drive(&self, state: &StateVector, t: f64, envelope: &DriveEnvelope) -> Result<StateVector> {
        let coeffs = FieldCoefficients {
            drive: envelope.field(t),
            ..Default::default()
        };
        let terms = Terms {
            external: true,
            ..Terms::NONE
        };
        self.apply_terms(coeffs, terms, state)
    }
}

#[inline]
fn axpy(o: &mut [C64], w: f64, y: &[C64]) {
    o.iter_mut().zip(y).for_each(|(o, y)| *o += w * y);
}

/// Anything that maps a vector to a vector linearly.
pub trait Operator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, input: &[C64], out: &mut [C64]);
}

pub struct FrozenHamiltonian<'a> {
    ham: &'a Hamiltonian,
    coeffs: FieldCoefficients,
    terms: Terms,
}

impl Operator for FrozenHamiltonian<'_> {
    fn dim(&self) -> usize {
        self.ham.dim()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        self.ham.apply(&self.coeffs, self.terms, input, out);
    }
}

/// Dense Hermitian matrix as an operator (tests and small oracles).
impl Operator for nalgebra::DMatrix<C64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, input: &[C64], out: &mut [C64]) {
        let n = self.nrows();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = C64::new(0.0, 0.0);
            for (k, x) in input.iter().enumerate() {
                acc += self[(i, k)] * x;
            }
            *o = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_space, FlatIndex, SpaceShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rigid_dimer(u: f64) -> MolecularParams {
        MolecularParams {
            onsite_u: u,
            ..Default::default()
        }
    }

    fn ham(shape: SpaceShape, model: ElectronicModel, omega_f: f64, g_c: f64, g_f: f64, gamma: f64) -> Hamiltonian {
        Hamiltonian::new(
            build_space(shape).unwrap(),
            model,
            RadiationParams { omega0: 1.28, omega_f },
            CouplingParams {
                g_c,
                g_f,
                gamma,
                bath_enabled: false,
            },
        )
        .unwrap()
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..dim)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    /// Molecular params whose rigid effective hopping is exactly `v_eff`.
    fn with_v_eff(v_eff: f64, u: f64) -> MolecularParams {
        MolecularParams {
            onsite_u: u,
            hopping: v_eff,
            attenuation: 1.0,
            r_fixed: 1e-300,
            ..Default::default()
        }
    }

    #[test]
    fn default_effective_hopping_is_minus_one() {
        let p = MolecularParams::default();
        assert!((p.effective_hopping(1.156) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn rigid_block_eigenvalues() {
        let ev = dimer_block_eigenvalues(-1.0, 0.0);
        for (a, b) in ev.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // U=1: U/2 ∓ √(4 + 1/4), 0 and U
        let ev = dimer_block_eigenvalues(-1.0, 1.0);
        let expect = [-1.561_552_812_808_830_3, 0.0, 1.0, 2.561_552_812_808_830_3];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn h_mol_matches_block_on_rigid_space() {
        let p = with_v_eff(-1.0, 1.0);
        let h = ham(
            SpaceShape::rigid(4, 1, 1),
            ElectronicModel::Dimer(p),
            0.0,
            0.0,
            0.0,
            0.0,
        );
        let block = dimer_block(-1.0, 1.0);
        for l in 0..4 {
            let st = h.space().basis_state(FlatIndex {
                lambda: l,
                n: 0,
                m: 0,
                j: 0,
            });
            let out = h.apply_h_mol(&st).unwrap();
            for k in 0..4 {
                assert_eq!(out.amplitudes[k].re, block[(k, l)]);
            }
        }
    }

    #[test]
    fn free_particle_laplacian_spectrum() {
        // V = 0, U = 0 and negligible C: the grid part is (1/M)(2 − 2cos(kπ/(N+1)))/Δx².
        let ng = 40;
        let p = MolecularParams {
            mass: 2.0,
            repulsion: 1e-300,
            onsite_u: 0.0,
            hopping: 0.0,
            attenuation: 1.0,
            r_fixed: 1.0,
        };
        let shape = SpaceShape {
            n_elec: 4,
            n_cav: 1,
            n_flu: 1,
            n_grid: ng,
            grid_min: 1.0,
            grid_max: 5.0,
        };
        let h = ham(shape, ElectronicModel::Dimer(p), 0.0, 0.0, 0.0, 0.0);
        let dx = h.space().dx();
        for k in [1usize, 5, 17] {
            let mut st = h.space().zeros();
            for j in 0..ng {
                let v = ((j + 1) as f64 * k as f64 * std::f64::consts::PI / (ng + 1) as f64).sin();
                st.amplitudes[h.space().index(FlatIndex {
                    lambda: 2,
                    n: 0,
                    m: 0,
                    j,
                })] = C64::new(v, 0.0);
            }
            let out = h.apply_h_mol(&st).unwrap();
            let e = (2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (ng + 1) as f64).cos()) / (p.mass * dx * dx);
            for (o, s) in out.amplitudes.iter().zip(&st.amplitudes) {
                assert!((o - s * e).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn radiation_is_diagonal() {
        let h = Hamiltonian::new(
            build_space(SpaceShape::rigid(4, 5, 3)).unwrap(),
            ElectronicModel::Dimer(rigid_dimer(1.0)),
            RadiationParams {
                omega0: 1.28,
                omega_f: 2.56,
            },
            CouplingParams {
                g_c: 0.0,
                g_f: 0.0,
                gamma: 0.0,
                bath_enabled: false,
            },
        )
        .unwrap();
        let vac = h.space().basis_state(FlatIndex {
            lambda: 0,
            n: 0,
            m: 0,
            j: 0,
        });
        assert!(h.apply_h_rad(&vac).unwrap().norm() == 0.0);
        let idx = FlatIndex {
            lambda: 2,
            n: 3,
            m: 1,
            j: 0,
        };
        let st = h.space().basis_state(idx);
        let out = h.apply_h_rad(&st).unwrap();
        let flat = h.space().index(idx);
        assert!((out.amplitudes[flat].re - 6.40).abs() < 1e-12);
        assert!((out.norm() - 6.40).abs() < 1e-12);
    }

    #[test]
    fn dipole_values() {
        let sp = build_space(SpaceShape::rigid(4, 1, 1)).unwrap();
        let model = ElectronicModel::Dimer(rigid_dimer(1.0));
        let s0 = sp.basis_state(FlatIndex {
            lambda: 0,
            n: 0,
            m: 0,
            j: 0,
        });
        let out = apply_dipole(&sp, &model, &s0).unwrap();
        assert_eq!(out.amplitudes[0], C64::new(2.0, 0.0));
        let s1 = sp.basis_state(FlatIndex {
            lambda: 1,
            n: 0,
            m: 0,
            j: 0,
        });
        assert_eq!(apply_dipole(&sp, &model, &s1).unwrap().norm(), 0.0);

        let tls = build_space(SpaceShape::rigid(2, 1, 1)).unwrap();
        let g = tls.basis_state(FlatIndex {
            lambda: 0,
            n: 0,
            m: 0,
            j: 0,
        });
        let e = apply_dipole(&tls, &ElectronicModel::Tls { gap: 2.0 }, &g).unwrap();
        assert_eq!(e.amplitudes, vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(apply_dipole(&tls, &model, &g).is_err());
    }

    /// Second-quantized oracle on the 16-state Fock space of two sites and two
    /// spins (Jordan-Wigner, mode order 1↑, 2↑, 1↓, 2↓), projected onto the
    /// two-electron S_z = 0 basis.
    mod fock {
        use nalgebra::{DMatrix, DVector};

        pub const UP1: usize = 0;
        pub const UP2: usize = 1;
        pub const DN1: usize = 2;
        pub const DN2: usize = 3;

        pub fn annihilate(k: usize) -> DMatrix<f64> {
            let mut c = DMatrix::zeros(16, 16);
            for state in 0..16usize {
                if state & (1 << k) != 0 {
                    let below = (state & ((1 << k) - 1)).count_ones();
                    let sign = if below.is_multiple_of(2) { 1.0 } else { -1.0 };
                    c[(state ^ (1 << k), state)] = sign;
                }
            }
            c
        }

        /// Columns are c†_{i↑} c†_{j↓}|vac⟩ for (1↑1↓, 1↑2↓, 2↑1↓, 2↑2↓).
        pub fn basis() -> DMatrix<f64> {
            let vac = DVector::from_fn(16, |i, _| if i == 0 { 1.0 } else { 0.0 });
            let mut b = DMatrix::zeros(16, 4);
            let pairs = [(UP1, DN1), (UP1, DN2), (UP2, DN1), (UP2, DN2)];
            for (col, (u, d)) in pairs.into_iter().enumerate() {
                let v = annihilate(u).transpose() * (annihilate(d).transpose() * &vac);
                b.set_column(col, &v);
            }
            b
        }

        pub fn project(op: &DMatrix<f64>) -> DMatrix<f64> {
            let b = basis();
            b.transpose() * op * b
        }
    }

    fn assert_matches(proj: &nalgebra::DMatrix<f64>, table: &[[f64; 4]]) {
        for i in 0..4 {
            for k in 0..4 {
                assert!(
                    (proj[(i, k)] - table[i][k]).abs() < 1e-14,
                    "({i},{k}): {} vs {}",
                    proj[(i, k)],
                    table[i][k]
                );
            }
        }
    }

    #[test]
    fn electronic_tables_match_second_quantization() {
        use fock::*;
        let c: Vec<_> = (0..4).map(annihilate).collect();
        let cd = |k: usize| c[k].transpose();
        let spins = [(UP1, UP2), (DN1, DN2)];

        let mut hop = nalgebra::DMatrix::zeros(16, 16);
        let mut dip = nalgebra::DMatrix::zeros(16, 16);
        let mut anti = nalgebra::DMatrix::zeros(16, 16);
        let mut bond = nalgebra::DMatrix::zeros(16, 16);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (s1, s2) in spins {
            hop += cd(s1) * &c[s2] + cd(s2) * &c[s1];
            let cb = (&c[s1] + &c[s2]) * r;
            let ca = (&c[s1] - &c[s2]) * r;
            dip += cb.transpose() * &ca + ca.transpose() * &cb;
            anti += ca.transpose() * &ca;
            bond += cb.transpose() * &cb;
        }
        let s_plus = cd(UP1) * &c[DN1] + cd(UP2) * &c[DN2];
        let s_minus = s_plus.transpose();
        let sz = (cd(UP1) * &c[UP1] + cd(UP2) * &c[UP2] - cd(DN1) * &c[DN1] - cd(DN2) * &c[DN2]) * 0.5;
        let s2 = &s_minus * &s_plus + &sz * &sz + &sz;

        assert_matches(&project(&hop), &DIMER_HOPPING);
        let model = ElectronicModel::Dimer(rigid_dimer(1.0));
        assert_matches(&project(&dip), &model.dipole_matrix());
        assert_matches(&project(&anti), &DIMER_ANTIBONDING_NUMBER);
        assert_matches(&project(&bond), &DIMER_BONDING_NUMBER);
        // V < 0: the symmetric orbital is the upper one
        assert_matches(&project(&bond), &model.excited_number_matrix());
        assert_matches(&project(&s2), &DIMER_SPIN_SQUARED);
    }

    #[test]
    fn interaction_matrix_element() {
        let h = ham(
            SpaceShape::rigid(4, 4, 2),
            ElectronicModel::Dimer(rigid_dimer(1.0)),
            2.56,
            0.08,
            0.0,
            0.0,
        );
        let st = h.space().basis_state(FlatIndex {
            lambda: 0,
            n: 0,
            m: 0,
            j: 0,
        });
        let out = h.apply_h_int(&st, 0.0).unwrap();
        let target = h.space().index(FlatIndex {
            lambda: 0,
            n: 1,
            m: 0,
            j: 0,
        });
        assert!((out.amplitudes[target].re - 0.16).abs() < 1e-15);
        assert!((out.norm() - 0.16).abs() < 1e-15);

        let h0 = ham(
            SpaceShape::rigid(4, 4, 2),
            ElectronicModel::Dimer(rigid_dimer(1.0)),
            2.56,
            0.0,
            0.0,
            0.0,
        );
        assert_eq!(h0.apply_h_int(&st, 3.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn damped_coupling_halves() {
        let c = CouplingParams {
            g_c: 0.0,
            g_f: 0.01,
            gamma: 0.02,
            bath_enabled: false,
        };
        let t = std::f64::consts::LN_2 / 0.02;
        assert!((c.flu_coupling(t) - 0.005).abs() < 1e-15);
        assert_eq!(c.flu_coupling(0.0), 0.01);
    }

    #[test]
    fn envelope_modes() {
        let tr = DriveEnvelope {
            amplitude: 0.2,
            mode: EnvelopeMode::Trapezoid { t1: 2.0, t2: 10.0 },
            carrier: 1.0,
        };
        assert_eq!(tr.envelope(1.0), 0.1);
        assert_eq!(tr.envelope(5.0), 0.2);
        assert_eq!(tr.field(10.5), 0.0);
        let su = DriveEnvelope {
            amplitude: 0.3,
            mode: EnvelopeMode::Sudden { ts: 3.0 },
            carrier: 2.0,
        };
        assert_eq!(su.field(1.0), 0.3 * 2.0f64.cos());
        assert_eq!(su.field(3.0), 0.0);

        let h = ham(
            SpaceShape::rigid(2, 4, 1),
            ElectronicModel::Tls { gap: 2.0 },
            2.0,
            0.1,
            0.01,
            0.0,
        );
        let st = h.space().basis_state(FlatIndex {
            lambda: 1,
            n: 1,
            m: 0,
            j: 0,
        });
        assert_eq!(h.apply_drive(&st, 11.0, &tr).unwrap().norm(), 0.0);
        let out = h.apply_drive(&st, 1.0, &su).unwrap();
        let up = h.space().index(FlatIndex {
            lambda: 1,
            n: 2,
            m: 0,
            j: 0,
        });
        assert!((out.amplitudes[up].re - 0.3 * 2.0f64.cos() * 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn resonance_values() {
        assert!((resonance_frequency(1.0, -1.0) - 2.5616).abs() < 5e-5);
        assert_eq!(resonance_frequency(0.0, -1.0), 2.0);
        assert!((resonance_frequency(2.0, -1.0) - 3.2361).abs() < 5e-5);
        let ev = dimer_block_eigenvalues(-1.0, 2.0);
        assert!((resonance_frequency(2.0, -1.0) - (2.0 - ev[0])).abs() < 1e-12);
    }

    #[test]
    fn analytic_levels() {
        let e: Vec<f64> = electronic_eigs_analytic(1.0, 0.0).iter().map(|l| l.energy).collect();
        assert_eq!(e, vec![-2.0, 0.0, 0.0, 2.0]);
        let e: Vec<f64> = electronic_eigs_analytic(0.0, 4.0).iter().map(|l| l.energy).collect();
        assert_eq!(e, vec![0.0, 0.0, 4.0, 4.0]);
        let l = electronic_eigs_analytic(1.0, 1.0);
        assert!((l[0].energy + 1.5616).abs() < 5e-5);
        assert_eq!((l[0].parity, l[0].spin), (Parity::Even, 0));
        assert_eq!((l[2].parity, l[2].spin), (Parity::Odd, 0));
    }

    #[test]
    fn resonance_equals_analytic_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = rng.gen_range(0.0..6.0);
            let t = rng.gen_range(-3.0..3.0);
            let l = electronic_eigs_analytic(t, u);
            assert!((resonance_frequency(u, t) - (l[2].energy - l[0].energy)).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_spin_and_commutator() {
        let sp = build_space(SpaceShape::rigid(4, 1, 1)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut trip = sp.zeros();
        trip.amplitudes[1] = C64::new(h, 0.0);
        trip.amplitudes[2] = C64::new(-h, 0.0);
        let s2 = spin_squared(&sp, &trip).unwrap();
        for (a, b) in s2.amplitudes.iter().zip(&trip.amplitudes) {
            assert!((a - 2.0 * b).norm() < 1e-15);
        }

        let sp = build_space(SpaceShape::rigid(4, 3, 2)).unwrap();
        let model = ElectronicModel::Dimer(rigid_dimer(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = crate::hilbert::StateVector {
            shape: *sp.shape(),
            amplitudes: random_state(sp.dim(), &mut rng),
        };
        let a = apply_dipole(&sp, &model, &spin_squared(&sp, &psi).unwrap()).unwrap();
        let b = spin_squared(&sp, &apply_dipole(&sp, &model, &psi).unwrap()).unwrap();
        let diff: f64 = a
            .amplitudes
            .iter()
            .zip(&b.amplitudes)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        assert!(diff.sqrt() < 1e-14);
    }

    #[test]
    fn parity_selection_rules() {
        let u = 1.3;
        let eig = SymmetricEigen::new(dimer_block(-0.8, u));
        let p = Matrix4::from_fn(|i, k| DIMER_SITE_PARITY[i][k]);
        let d = Matrix4::from_fn(|i, k| ElectronicModel::Dimer(rigid_dimer(u)).dipole_matrix()[i][k]);
        let vecs: Vec<_> = (0..4).map(|i| eig.eigenvectors.column(i).into_owned()).collect();
        let par: Vec<f64> = vecs.iter().map(|v| (v.transpose() * p * v)[(0, 0)]).collect();
        for (i, vi) in vecs.iter().enumerate() {
            assert!((par[i].abs() - 1.0).abs() < 1e-12);
            for (k, vk) in vecs.iter().enumerate() {
                let mel = (vi.transpose() * d * vk)[(0, 0)];
                if par[i] * par[k] > 0.0 {
                    assert!(mel.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gauge_sign_of_hopping() {
        for u in [0.0, 1.0, 3.0] {
            let a = dimer_block_eigenvalues(-0.9, u);
            let b = dimer_block_eigenvalues(0.9, u);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            let gap_elem = |v: f64| {
                let eig = SymmetricEigen::new(dimer_block(v, u));
                let d = Matrix4::from_fn(|i, k| ElectronicModel::Dimer(rigid_dimer(u)).dipole_matrix()[i][k]);
                let mut idx: Vec<usize> = (0..4).collect();
                idx.sort_by(|&i, &k| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[k]));
                let g = eig.eigenvectors.column(idx[0]).into_owned();
                let o = eig.eigenvectors.column(idx[2]).into_owned();
                (g.transpose() * d * o)[(0, 0)].powi(2)
            };
            assert!((gap_elem(-0.9) - gap_elem(0.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn every_term_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shapes = [
            (
                SpaceShape {
                    n_elec: 4,
                    n_cav: 4,
                    n_flu: 3,
                    n_grid: 6,
                    grid_min: 0.8,
                    grid_max: 3.0,
                },
                ElectronicModel::Dimer(MolecularParams {
                    mass: 3.0,
                    ..Default::default()
                }),
            ),
            (SpaceShape::rigid(2, 5, 3), ElectronicModel::Tls { gap: 2.0 }),
        ];
        let coeffs = FieldCoefficients {
            flu_coupling: 0.03,
            drive: 0.2,
            bath: -0.07,
        };
        let single = [
            Terms {
                molecular: true,
                ..Terms::NONE
            },
            Terms {
                radiation: true,
                ..Terms::NONE
            },
            Terms {
                interaction: true,
                ..Terms::NONE
            },
            Terms {
                external: true,
                ..Terms::NONE
            },
            Terms::ALL,
        ];
        for (shape, model) in shapes {
            let h = ham(shape, model, 2.3, 0.08, 0.01, 0.02);
            let phi = random_state(h.dim(), &mut rng);
            let psi = random_state(h.dim(), &mut rng);
            for terms in single {
                let mut hp = vec![C64::default(); h.dim()];
                let mut hf = vec![C64::default(); h.dim()];
                h.apply(&coeffs, terms, &psi, &mut hp);
                h.apply(&coeffs, terms, &phi, &mut hf);
                let a = crate::hilbert::inner(&phi, &hp);
                let b = crate::hilbert::inner(&psi, &hf).conj();
                assert!((a - b).norm() < 1e-12, "{terms:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bo_surface_shape() {
        let p = MolecularParams::default();
        // the electronic ground energy vanishes from below; C/x⁴ decays slower
        // than the hopping, so the total approaches 0 from above
        let far = bo_surface(&[40.0, 60.0], &p);
        assert!(far[0].abs() < 1e-6 && far[1].abs() < far[0].abs());
        for x in [40.0, 60.0] {
            assert!(dimer_block_eigenvalues(p.effective_hopping(x), p.onsite_u)[0] <= 0.0);
        }
        let xs: Vec<f64> = (0..3001).map(|i| 0.8 + i as f64 * 1e-4 * 3.0).collect();
        let e = bo_surface(&xs, &p);
        let (imin, _) = e.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((1.1..=1.4).contains(&xs[imin]));
    }
}
