//! Measured quantities: fluorescence probability, photon numbers, parity,
//! nuclear density and dissociation.

use crate::error::{Error, Result};
use crate::hilbert::{norm_sqr, HilbertSpace, C64};
use crate::model::{apply_electronic, ElectronicModel, FieldCoefficients, Hamiltonian, Terms};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Cavity,
    Fluorescence,
}

/// Probability of one or more fluorescence photons, i.e. one minus the
/// m = 0 weight of the normalized state.
pub fn fluorescence_probability(space: &HilbertSpace, psi: &[C64]) -> f64 {
    let s = space.shape();
    let ng = s.n_grid;
    let norm = norm_sqr(psi);
    if norm == 0.0 {
        return 0.0;
    }
    let emitted: f64 = psi.chunks(ng * s.n_flu).map(|slab| norm_sqr(&slab[ng..])).sum();
    (emitted / norm).clamp(0.0, 1.0)
}

/// ⟨b†b⟩ or ⟨b′†b′⟩.
pub fn photon_number(space: &HilbertSpace, psi: &[C64], mode: Mode) -> f64 {
    let s = space.shape();
    let ng = s.n_grid;
    let mut acc = 0.0;
    for (k, block) in psi.chunks(ng).enumerate() {
        let m = k % s.n_flu;
        let n = (k / s.n_flu) % s.n_cav;
        let occ = match mode {
            Mode::Cavity => n,
            Mode::Fluorescence => m,
        };
        if occ > 0 {
            acc += occ as f64 * norm_sqr(block);
        }
    }
    acc
}

/// ⟨b† + b⟩ or ⟨b′† + b′⟩.
pub fn quadrature(space: &HilbertSpace, psi: &[C64], mode: Mode) -> f64 {
    let s = space.shape();
    let (nc, nf, ng) = (s.n_cav, s.n_flu, s.n_grid);
    let mut acc = 0.0;
    for l in 0..s.n_elec {
        for n in 0..nc {
            for m in 0..nf {
                let (n2, m2, occ) = match mode {
                    Mode::Cavity if n + 1 < nc => (n + 1, m, n + 1),
                    Mode::Fluorescence if m + 1 < nf => (n, m + 1, m + 1),
                    _ => continue,
                };
                let lo = ((l * nc + n) * nf + m) * ng;
                let hi = ((l * nc + n2) * nf + m2) * ng;
                let c: C64 = psi[hi..hi + ng]
                    .iter()
                    .zip(&psi[lo..lo + ng])
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                acc += 2.0 * (occ as f64).sqrt() * c.re;
            }
        }
    }
    acc
}

/// Π = ⟨(−1)^{b†b} (n̂₀ − n̂₁) (−1)^{b′†b′}⟩ on the two-level system.
pub fn total_parity(space: &HilbertSpace, model: &ElectronicModel, psi: &[C64]) -> Result<f64> {
    if !matches!(model, ElectronicModel::Tls { .. }) || space.shape().n_elec != 2 {
        return Err(Error::WrongModel {
            required: "two-level system",
            found: model.name(),
        });
    }
    let s = space.shape();
    let ng = s.n_grid;
    let mut acc = 0.0;
    for (k, block) in psi.chunks(ng).enumerate() {
        let m = k % s.n_flu;
        let n = (k / s.n_flu) % s.n_cav;
        let l = k / (s.n_flu * s.n_cav);
        let sign = if (n + m + l).is_multiple_of(2) { 1.0 } else { -1.0 };
        acc += sign * norm_sqr(block);
    }
    Ok(acc / norm_sqr(psi))
}

/// N(r_j) = Σ_{λ,n,m} |ψ(λ,n,m,j)|², normalized to unit sum.
pub fn nuclear_density(space: &HilbertSpace, psi: &[C64]) -> Result<Vec<f64>> {
    let ng = space.shape().n_grid;
    if ng < 2 {
        return Err(Error::InvalidShape("nuclear density needs n_grid > 1".into()));
    }
    let mut dens = vec![0.0; ng];
    for block in psi.chunks(ng) {
        for (d, a) in dens.iter_mut().zip(block) {
            *d += a.norm_sqr();
        }
    }
    let total: f64 = dens.iter().sum();
    if total > 0.0 {
        dens.iter_mut().for_each(|d| *d /= total);
    }
    Ok(dens)
}

/// Weight of the nuclear density beyond `r_cut`.
pub fn dissociation_probability(space: &HilbertSpace, psi: &[C64], r_cut: f64) -> Result<f64> {
    let s = space.shape();
    if s.n_grid < 2 {
        return Err(Error::InvalidShape("dissociation needs n_grid > 1".into()));
    }
    if !(r_cut > s.grid_min && r_cut < s.grid_max) {
        return Err(Error::InvalidParameter {
            name: "r_cut",
            reason: format!("{r_cut} outside the grid ({}, {})", s.grid_min, s.grid_max),
        });
    }
    let dens = nuclear_density(space, psi)?;
    Ok(dissociation_from_density(space.grid(), &dens, r_cut))
}

pub fn dissociation_from_density(grid: &[f64], density: &[f64], r_cut: f64) -> f64 {
    grid.iter()
        .zip(density)
        .filter(|(x, _)| **x > r_cut)
        .map(|(_, d)| d)
        .sum()
}

/// Antibonding-orbital occupation (dimer) or ⟨n̂₁⟩ (two-level system).
pub fn excited_population(space: &HilbertSpace, model: &ElectronicModel, psi: &[C64]) -> f64 {
    let mut tmp = vec![C64::default(); psi.len()];
    apply_electronic(space, &model.excited_number_matrix(), psi, &mut tmp);
    crate::hilbert::inner(psi, &tmp).re / norm_sqr(psi)
}

/// Time-stamped observables of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub p_fluor: f64,
    pub n_cav: f64,
    pub n_flu: f64,
    /// Two-level runs only.
    pub parity: Option<f64>,
    pub nuclear_density: Option<Vec<f64>>,
    pub n_excited: f64,
    pub norm: f64,
    /// ⟨H_s(t)⟩ without drive and bath terms.
    pub energy: f64,
    pub p_diss: Option<f64>,
}

impl Snapshot {
    pub fn capture(ham: &Hamiltonian, t: f64, psi: &[C64], r_cut: Option<f64>, keep_density: bool) -> Result<Self> {
        let space = ham.space();
        let model = ham.model();
        let coeffs = FieldCoefficients {
            flu_coupling: ham.coupling().flu_coupling(t),
            ..Default::default()
        };
        let parity = match model {
            ElectronicModel::Tls { .. } => Some(total_parity(space, model, psi)?),
            ElectronicModel::Dimer(_) => None,
        };
        let (density, p_diss) = if space.shape().n_grid > 1 {
            let d = nuclear_density(space, psi)?;
            let p = match r_cut {
                Some(r) => Some(dissociation_probability(space, psi, r)?),
                None => None,
            };
            (Some(d), p)
        } else {
            (None, None)
        };
        Ok(Snapshot {
            t,
            p_fluor: fluorescence_probability(space, psi),
            n_cav: photon_number(space, psi, Mode::Cavity),
            n_flu: photon_number(space, psi, Mode::Fluorescence),
            parity,
            nuclear_density: if keep_density { density } else { None },
            n_excited: excited_population(space, model, psi),
            norm: norm_sqr(psi).sqrt(),
            energy: ham.expectation(&coeffs, Terms::SYSTEM, psi),
            p_diss,
        })
    }
}

/// Normalized truncated coherent amplitudes e^{−β²/2} βⁿ/√n! for n < cutoff,
/// with the norm deficit 1 − Σ|c_n|² of the truncation.
pub fn coherent_amplitudes(beta: f64, cutoff: usize) -> (Vec<f64>, f64) {
    let mut amps = Vec::with_capacity(cutoff);
    let mut c = (-0.5 * beta * beta).exp();
    for n in 0..cutoff {
        if n > 0 {
            c *= beta / (n as f64).sqrt();
        }
        amps.push(c);
    }
    let kept: f64 = amps.iter().map(|a| a * a).sum();
    (amps, (1.0 - kept).max(0.0))
}
