#![allow(dead_code)]

use molcav::hilbert::SpaceShape;
use molcav::model::{DriveEnvelope, ElectronicModel, EnvelopeMode, MolecularParams};
use molcav::propagator::{GroundStateConfig, KrylovConfig};
use molcav::scenarios::{Dissipation, InitialState, Scenario};

pub fn tls(n_cav: usize, n_flu: usize, init: InitialState) -> Scenario {
    Scenario {
        model: ElectronicModel::Tls { gap: 2.0 },
        space: SpaceShape::rigid(2, n_cav, n_flu),
        omega0: 1.0,
        g_c: 0.1,
        g_f: 0.01,
        init,
        dissipation: Dissipation::Exponential { gamma: 0.02 },
        t_end: 4.0,
        omega_scan: vec![1.9, 2.0, 2.1],
        seed: 1,
        krylov: KrylovConfig {
            dt: 0.05,
            krylov_dim: 20,
            ..Default::default()
        },
        ground: GroundStateConfig::default(),
        snapshot_every: 20,
        r_cut: None,
    }
}

pub fn rigid_dimer(n_cav: usize, n_flu: usize, omega0: f64, init: InitialState) -> Scenario {
    Scenario {
        model: ElectronicModel::Dimer(MolecularParams::default()),
        space: SpaceShape::rigid(4, n_cav, n_flu),
        omega0,
        g_c: 0.08,
        g_f: 0.01,
        init,
        dissipation: Dissipation::Exponential { gamma: 0.02 },
        t_end: 4.0,
        omega_scan: vec![2.4, 2.56],
        seed: 1,
        krylov: KrylovConfig {
            dt: 0.05,
            krylov_dim: 20,
            ..Default::default()
        },
        ground: GroundStateConfig::default(),
        snapshot_every: 20,
        r_cut: None,
    }
}

pub fn grid_dimer(mass: f64, n_grid: usize, grid_min: f64, grid_max: f64, init: InitialState) -> Scenario {
    Scenario {
        model: ElectronicModel::Dimer(MolecularParams {
            mass,
            ..Default::default()
        }),
        space: SpaceShape {
            n_elec: 4,
            n_cav: 6,
            n_flu: 2,
            n_grid,
            grid_min,
            grid_max,
        },
        ..rigid_dimer(6, 2, 2.56, init)
    }
}

pub fn sudden(amplitude: f64, ts: f64, carrier: f64) -> DriveEnvelope {
    DriveEnvelope {
        amplitude,
        mode: EnvelopeMode::Sudden { ts },
        carrier,
    }
}

pub fn trapezoid(amplitude: f64, t1: f64, t2: f64, carrier: f64) -> DriveEnvelope {
    DriveEnvelope {
        amplitude,
        mode: EnvelopeMode::Trapezoid { t1, t2 },
        carrier,
    }
}

pub fn pumped(envelope: DriveEnvelope) -> InitialState {
    InitialState::Pumped {
        envelope,
        target: 1.0,
        calibrate: false,
    }
}
