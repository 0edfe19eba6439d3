//! Run orchestration: initial states, the coupled quantum/bath time loop,
//! pump calibration, the ω′ sweep, peak detection and the convergence
//! protocol.
//!
//! Time step k sits at t_k = k·dt exactly (the last step is shortened to land
//! on t_end). Inside a step the Hamiltonian is frozen at the midpoint of each
//! sub-interval, where sub-intervals are cut at drive-envelope breakpoints.
//! With a bath the per-step order is: quadratures of Ψ(t_k), Krylov step with
//! the bath field at the half step, then one Verlet step of the oscillators.

use std::sync::Mutex;

use rayon::prelude::*;

use crate::bath::{Bath, BathParams, BathState};
use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, SpaceShape, StateVector, C64};
use crate::model::{
    resonance_frequency, CouplingParams, DriveEnvelope, ElectronicModel, EnvelopeMode, FieldCoefficients, Hamiltonian,
    RadiationParams, Terms,
};
use crate::observables::{coherent_amplitudes, photon_number, quadrature, Mode, Snapshot};
use crate::propagator::{ground_state, GroundStateConfig, KrylovConfig, KrylovPropagator, SeedPolicy};

/// Largest allowed truncation loss of a coherent cavity state.
pub const COHERENT_DEFICIT_MAX: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    /// |g_m⟩|β⟩_c|0⟩_f
    Coherent { beta: f64 },
    /// Ground state of H_s(0), then the cavity pump. With `calibrate` the
    /// envelope amplitude is searched so that ⟨b†b⟩ at shut-off hits `target`.
    Pumped {
        envelope: DriveEnvelope,
        target: f64,
        calibrate: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dissipation {
    None,
    Exponential { gamma: f64 },
    Bath(BathParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub model: ElectronicModel,
    pub space: SpaceShape,
    pub omega0: f64,
    pub g_c: f64,
    pub g_f: f64,
    pub init: InitialState,
    pub dissipation: Dissipation,
    pub t_end: f64,
    pub omega_scan: Vec<f64>,
    pub seed: u64,
    pub krylov: KrylovConfig,
    pub ground: GroundStateConfig,
    pub snapshot_every: usize,
    /// Dissociation threshold; `None` picks 4·r_fixed when it lies on the grid.
    pub r_cut: Option<f64>,
}

/// `points` values evenly spanning [0.2, 1.6]·max(ω₀, Ω_R).
pub fn default_scan(omega0: f64, omega_r: f64, points: usize) -> Vec<f64> {
    let top = omega0.max(omega_r);
    linspace(0.2 * top, 1.6 * top, points)
}

pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![a],
        _ => {
            let h = (b - a) / (points - 1) as f64;
            (0..points).map(|i| a + h * i as f64).collect()
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        HilbertSpace::new(self.space)?;
        if self.space.n_elec != self.model.n_elec() {
            return Err(Error::InvalidShape(format!(
                "n_elec = {} but the {} needs {}",
                self.space.n_elec,
                self.model.name(),
                self.model.n_elec()
            )));
        }
        self.coupling().validate()?;
        self.krylov.validate()?;
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("must be positive, got {}", self.t_end),
            });
        }
        if !(self.omega0 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "omega0",
                reason: format!("must be >= 0, got {}", self.omega0),
            });
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidParameter {
                name: "snapshot_every",
                reason: "must be at least 1".into(),
            });
        }
        if self.omega_scan.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "omega_scan",
                reason: "frequencies must be finite and >= 0".into(),
            });
        }
        if self.omega_scan.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter {
                name: "omega_scan",
                reason: "must be strictly increasing".into(),
            });
        }
        match self.init {
            InitialState::Coherent { beta } => {
                if !beta.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "beta",
                        reason: "must be finite".into(),
                    });
                }
            }
            InitialState::Pumped { envelope, target, .. } => {
                if !(target >= 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "target",
                        reason: format!("must be >= 0, got {target}"),
                    });
                }
                let ok = match envelope.mode {
                    EnvelopeMode::Trapezoid { t1, t2 } => t1 > 0.0 && t2 >= t1,
                    EnvelopeMode::Sudden { ts } => ts > 0.0,
                };
                if !ok {
                    return Err(Error::InvalidParameter {
                        name: "envelope",
                        reason: "need 0 < t1 <= t2 (trapezoid) or ts > 0 (sudden)".into(),
                    });
                }
            }
        }
        if let Dissipation::Bath(b) = &self.dissipation {
            b.validate()?;
        }
        if let Dissipation::Exponential { gamma } = self.dissipation {
            if !(gamma >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "gamma",
                    reason: format!("must be >= 0, got {gamma}"),
                });
            }
        }
        if let Some(r) = self.r_cut {
            let s = &self.space;
            if s.n_grid < 2 || !(r > s.grid_min && r < s.grid_max) {
                return Err(Error::InvalidParameter {
                    name: "r_cut",
                    reason: format!("{r} is not inside the nuclear grid"),
                });
            }
        }
        Ok(())
    }

    pub fn coupling(&self) -> CouplingParams {
        let (gamma, bath_enabled) = match self.dissipation {
            Dissipation::None => (0.0, false),
            Dissipation::Exponential { gamma } => (gamma, false),
            Dissipation::Bath(_) => (0.0, true),
        };
        CouplingParams {
            g_c: self.g_c,
            g_f: self.g_f,
            gamma,
            bath_enabled,
        }
    }

    /// Many-body resonance Ω_R of the model at r_fixed (gap for the TLS).
    pub fn omega_r(&self) -> f64 {
        match &self.model {
            ElectronicModel::Dimer(p) => resonance_frequency(p.onsite_u, p.effective_hopping(p.r_fixed)),
            ElectronicModel::Tls { gap } => *gap,
        }
    }

    pub fn drive(&self) -> Option<DriveEnvelope> {
        match self.init {
            InitialState::Pumped { envelope, .. } => Some(envelope),
            InitialState::Coherent { .. } => None,
        }
    }

    pub fn effective_r_cut(&self) -> Option<f64> {
        if self.space.n_grid < 2 {
            return None;
        }
        if self.r_cut.is_some() {
            return self.r_cut;
        }
        match &self.model {
            ElectronicModel::Dimer(p) => {
                let r = 4.0 * p.r_fixed;
                (r > self.space.grid_min && r < self.space.grid_max).then_some(r)
            }
            ElectronicModel::Tls { .. } => None,
        }
    }

    pub fn hamiltonian(&self, omega_f: f64) -> Result<Hamiltonian> {
        self.hamiltonian_on(self.space, omega_f)
    }

    fn hamiltonian_on(&self, shape: SpaceShape, omega_f: f64) -> Result<Hamiltonian> {
        let radiation = RadiationParams {
            omega0: self.omega0,
            omega_f,
        };
        Hamiltonian::new(HilbertSpace::new(shape)?, self.model, radiation, self.coupling())
    }

    pub fn n_steps(&self) -> usize {
        let n = (self.t_end / self.krylov.dt - 1e-9).ceil();
        (n.max(1.0)) as usize
    }

    /// t_k, with the final step landing on t_end.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps() {
            self.t_end
        } else {
            k as f64 * self.krylov.dt
        }
    }

    /// Step indices at which snapshots are taken.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..n).step_by(self.snapshot_every).collect();
        steps.push(n);
        steps
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snapshot_steps().into_iter().map(|k| self.time(k)).collect()
    }

    /// Copy with a pumped amplitude fixed, so later runs skip calibration.
    pub fn with_drive_amplitude(&self, amplitude: f64) -> Scenario {
        let mut s = self.clone();
        if let InitialState::Pumped { envelope, target, .. } = self.init {
            s.init = InitialState::Pumped {
                envelope: envelope.with_amplitude(amplitude),
                target,
                calibrate: false,
            };
        }
        s
    }

    fn with_space(&self, space: SpaceShape) -> Scenario {
        Scenario { space, ..self.clone() }
    }
}

fn shape_with(shape: SpaceShape, n_cav: usize, n_flu: usize) -> SpaceShape {
    SpaceShape { n_cav, n_flu, ..shape }
}

/// Copies `reduced` (cutoffs n_cav', n_flu') into the larger `full` shape,
/// zero elsewhere.
pub fn embed(reduced: &StateVector, full: &SpaceShape) -> Result<Vec<C64>> {
    let r = reduced.shape;
    if r.n_elec != full.n_elec || r.n_grid != full.n_grid || r.n_cav > full.n_cav || r.n_flu > full.n_flu {
        return Err(Error::InvalidShape(format!("cannot embed shape {r:?} into {full:?}")));
    }
    let ng = r.n_grid;
    let mut out = vec![C64::default(); full.dim()];
    for l in 0..r.n_elec {
        for n in 0..r.n_cav {
            for m in 0..r.n_flu {
                let src = ((l * r.n_cav + n) * r.n_flu + m) * ng;
                let dst = ((l * full.n_cav + n) * full.n_flu + m) * ng;
                out[dst..dst + ng].copy_from_slice(&reduced.amplitudes[src..src + ng]);
            }
        }
    }
    Ok(out)
}

/// Ground state of H_mol alone (photon vacua, no couplings act).
pub fn molecular_ground_state(scenario: &Scenario) -> Result<StateVector> {
    let shape = shape_with(scenario.space, 1, 1);
    let ham = scenario.hamiltonian_on(shape, 0.0)?;
    let op = ham.frozen(FieldCoefficients::default(), Terms::SYSTEM);
    let res = ground_state(&op, ham.space(), SeedPolicy::Random(scenario.seed), &scenario.ground)?;
    Ok(res.state)
}

/// Product of a molecular state with a truncated coherent cavity state and
/// the fluorescence vacuum.
pub fn coherent_initial_state(beta: f64, shape: &SpaceShape, molecular: &StateVector) -> Result<StateVector> {
    let (amps, deficit) = coherent_amplitudes(beta, shape.n_cav);
    if deficit > COHERENT_DEFICIT_MAX {
        return Err(Error::CutoffTooSmall {
            cutoff: shape.n_cav,
            beta,
            deficit,
        });
    }
    let m = molecular.shape;
    if m.n_elec != shape.n_elec || m.n_grid != shape.n_grid || m.n_cav != 1 || m.n_flu != 1 {
        return Err(Error::InvalidShape(format!(
            "molecular state shape {m:?} does not match {shape:?}"
        )));
    }
    let ng = shape.n_grid;
    let mut out = vec![C64::default(); shape.dim()];
    for l in 0..shape.n_elec {
        let mol = &molecular.amplitudes[l * ng..(l + 1) * ng];
        for (n, c) in amps.iter().enumerate() {
            let dst = ((l * shape.n_cav + n) * shape.n_flu) * ng;
            out[dst..dst + ng].iter_mut().zip(mol).for_each(|(o, a)| *o = a * c);
        }
    }
    Ok(StateVector {
        shape: *shape,
        amplitudes: out,
    })
}

/// Ground state of H_s(0) without the fluorescence mode (n_flu = 1), seeded
/// with the molecular ground state times the cavity vacuum.
pub fn dressed_ground_state(scenario: &Scenario, molecular: &StateVector) -> Result<StateVector> {
    let shape = shape_with(scenario.space, scenario.space.n_cav, 1);
    let ham = scenario.hamiltonian_on(shape, 0.0)?;
    let seed = embed(molecular, &shape)?;
    let op = ham.frozen(FieldCoefficients::at(ham.coupling(), None, 0.0, 0.0), Terms::SYSTEM);
    Ok(ground_state(&op, ham.space(), SeedPolicy::Vector(seed), &scenario.ground)?.state)
}

/// Ground state of the full H_s(0) at fluorescence frequency `omega_f`.
pub fn full_ground_state(scenario: &Scenario, omega_f: f64, dressed: &StateVector) -> Result<StateVector> {
    if scenario.space.n_flu == 1 {
        return Ok(dressed.clone());
    }
    let ham = scenario.hamiltonian(omega_f)?;
    let seed = embed(dressed, &scenario.space)?;
    let coeffs = FieldCoefficients::at(ham.coupling(), None, 0.0, 0.0);
    let op = ham.frozen(coeffs, Terms::SYSTEM);
    Ok(ground_state(&op, ham.space(), SeedPolicy::Vector(seed), &scenario.ground)?.state)
}

/// Bath diagnostics at one snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathSample {
    pub t: f64,
    pub feedback: f64,
    pub bath_energy: f64,
    /// −f ⟨(b†+b) + (b′†+b′)⟩
    pub coupling_energy: f64,
}

/// One trajectory: state, optional bath, and the step counter.
pub struct Propagation<'a> {
    scenario: &'a Scenario,
    ham: &'a Hamiltonian,
    drive: Option<DriveEnvelope>,
    bath: Option<Bath>,
    prop: KrylovPropagator,
    pub psi: Vec<C64>,
    pub step: usize,
}

impl<'a> Propagation<'a> {
    pub fn new(scenario: &'a Scenario, ham: &'a Hamiltonian, psi: Vec<C64>) -> Result<Self> {
        if psi.len() != ham.dim() {
            return Err(Error::ShapeMismatch {
                expected: ham.dim(),
                actual: psi.len(),
            });
        }
        let bath = match &scenario.dissipation {
            Dissipation::Bath(p) => Some(Bath::new(p)?),
            _ => None,
        };
        Ok(Propagation {
            scenario,
            ham,
            drive: scenario.drive(),
            bath,
            prop: KrylovPropagator::new(scenario.krylov, ham.dim())?,
            psi,
            step: 0,
        })
    }

    /// Restores a saved step counter and bath state.
    pub fn resume(&mut self, step: usize, psi: Vec<C64>, bath: Option<BathState>) -> Result<()> {
        if psi.len() != self.psi.len() {
            return Err(Error::Checkpoint(format!(
                "state length {} does not match dimension {}",
                psi.len(),
                self.psi.len()
            )));
        }
        match (&mut self.bath, bath) {
            (Some(b), Some(s)) if s.x.len() == b.omega.len() && s.p.len() == b.omega.len() => b.state = s,
            (None, None) => {}
            _ => return Err(Error::Checkpoint("bath state does not match the scenario".into())),
        }
        self.psi = psi;
        self.step = step;
        Ok(())
    }

    pub fn bath_state(&self) -> Option<&BathState> {
        self.bath.as_ref().map(|b| &b.state)
    }

    pub fn time(&self) -> f64 {
        self.scenario.time(self.step)
    }

    pub fn step_once(&mut self) -> Result<()> {
        let s = self.scenario;
        let t0 = s.time(self.step);
        let t1 = s.time(self.step + 1);
        let dt = t1 - t0;
        let space = self.ham.space();
        let (force, f_mid) = match &self.bath {
            Some(b) => (
                quadrature(space, &self.psi, Mode::Cavity) + quadrature(space, &self.psi, Mode::Fluorescence),
                b.midpoint_feedback(dt),
            ),
            None => (0.0, 0.0),
        };
        let mut cuts = vec![t0];
        if let Some(d) = &self.drive {
            for bp in d.breakpoints() {
                if bp > t0 && bp < t1 {
                    cuts.push(bp);
                }
            }
        }
        cuts.push(t1);
        let coupling = *self.ham.coupling();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let tf = if s.krylov.midpoint { 0.5 * (a + b) } else { a };
            let coeffs = FieldCoefficients::at(&coupling, self.drive.as_ref(), f_mid, tf);
            let op = self.ham.frozen(coeffs, Terms::ALL);
            self.prop.step(&op, &mut self.psi, b - a)?;
        }
        if let Some(b) = &mut self.bath {
            b.verlet_step(force, dt);
        }
        self.step += 1;
        Ok(())
    }

    pub fn snapshot(&self, keep_density: bool) -> Result<Snapshot> {
        Snapshot::capture(
            self.ham,
            self.time(),
            &self.psi,
            self.scenario.effective_r_cut(),
            keep_density,
        )
    }

    pub fn bath_sample(&self) -> Option<BathSample> {
        self.bath.as_ref().map(|b| {
            let space = self.ham.space();
            let q = quadrature(space, &self.psi, Mode::Cavity) + quadrature(space, &self.psi, Mode::Fluorescence);
            BathSample {
                t: self.time(),
                feedback: b.feedback(),
                bath_energy: b.energy(),
                coupling_energy: b.coupling_energy(q),
            }
        })
    }
}

/// Serializable progress of one ω′ job.
#[derive(Clone, Debug, PartialEq)]
pub struct JobCheckpoint {
    pub job: usize,
    pub omega_f: f64,
    pub step: usize,
    pub psi: Vec<C64>,
    pub bath: Option<BathState>,
    pub snapshots: Vec<Snapshot>,
    pub bath_trace: Vec<BathSample>,
    pub finished: bool,
}

/// Persistence hook used by the sweep; implementations must be callable
/// from several workers.
pub trait CheckpointStore: Sync {
    fn load(&self, job: usize) -> Result<Option<JobCheckpoint>>;
    fn save(&self, checkpoint: &JobCheckpoint) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobResult {
    pub snapshots: Vec<Snapshot>,
    pub bath_trace: Vec<BathSample>,
}

#[derive(Clone, Copy, Default)]
pub struct JobOptions<'a> {
    pub keep_density: bool,
    /// Save every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub store: Option<&'a dyn CheckpointStore>,
    pub job: usize,
}

/// Propagates `psi0` to t_end, collecting snapshots.
pub fn run_trajectory(
    scenario: &Scenario,
    ham: &Hamiltonian,
    psi0: Vec<C64>,
    opts: JobOptions<'_>,
) -> Result<JobResult> {
    let mut run = Propagation::new(scenario, ham, psi0)?;
    let mut snapshots = Vec::new();
    let mut trace = Vec::new();
    if let Some(store) = opts.store {
        if let Some(cp) = store.load(opts.job)? {
            if cp.omega_f.to_bits() != ham.radiation().omega_f.to_bits() {
                return Err(Error::Checkpoint(format!(
                    "job {} was saved for omega_prime {} not {}",
                    opts.job,
                    cp.omega_f,
                    ham.radiation().omega_f
                )));
            }
            if cp.finished {
                return Ok(JobResult {
                    snapshots: cp.snapshots,
                    bath_trace: cp.bath_trace,
                });
            }
            run.resume(cp.step, cp.psi, cp.bath)?;
            snapshots = cp.snapshots;
            trace = cp.bath_trace;
        }
    }
    let steps = scenario.snapshot_steps();
    let n = scenario.n_steps();
    let save = |run: &Propagation, snaps: &Vec<Snapshot>, trace: &Vec<BathSample>, finished: bool| -> Result<()> {
        if let Some(store) = opts.store {
            store.save(&JobCheckpoint {
                job: opts.job,
                omega_f: ham.radiation().omega_f,
                step: run.step,
                psi: run.psi.clone(),
                bath: run.bath_state().cloned(),
                snapshots: snaps.clone(),
                bath_trace: trace.clone(),
                finished,
            })?;
        }
        Ok(())
    };
    let mut next = steps.iter().position(|&k| k >= run.step).unwrap_or(steps.len());
    // a resumed run already holds the snapshot at its own step
    if next < steps.len() && steps[next] == run.step && snapshots.len() > next {
        next += 1;
    }
    loop {
        if next < steps.len() && steps[next] == run.step {
            snapshots.push(run.snapshot(opts.keep_density)?);
            if let Some(b) = run.bath_sample() {
                trace.push(b);
            }
            next += 1;
        }
        if run.step >= n {
            break;
        }
        run.step_once()?;
        if opts.checkpoint_every > 0 && run.step % opts.checkpoint_every == 0 && run.step < n {
            // take the snapshot for this step first so the saved list is complete
            if next < steps.len() && steps[next] == run.step {
                snapshots.push(run.snapshot(opts.keep_density)?);
                if let Some(b) = run.bath_sample() {
                    trace.push(b);
                }
                next += 1;
            }
            save(&run, &snapshots, &trace, false)?;
        }
    }
    save(&run, &snapshots, &trace, true)?;
    Ok(JobResult {
        snapshots,
        bath_trace: trace,
    })
}

/// α(t) of a bare cavity ω₀ b†b driven by E(t) cos(ω_c t)(b†+b) from the
/// vacuum: α(t) = −i e^{−iω₀t} ∫₀ᵗ E(s) cos(ω_c s) e^{iω₀s} ds, in closed form
/// for the piecewise-linear envelopes.
pub fn driven_cavity_alpha(envelope: &DriveEnvelope, omega0: f64, t: f64) -> C64 {
    // (start, end, a, b): E(s) = a + b s on [start, end]
    let segments: Vec<(f64, f64, f64, f64)> = match envelope.mode {
        EnvelopeMode::Trapezoid { t1, t2 } => vec![
            (0.0, t1, 0.0, envelope.amplitude / t1),
            (t1, t2, envelope.amplitude, 0.0),
        ],
        EnvelopeMode::Sudden { ts } => vec![(0.0, ts, envelope.amplitude, 0.0)],
    };
    let wc = envelope.carrier;
    let mut acc = C64::default();
    for (s0, s1, a, b) in segments {
        let hi = s1.min(t);
        if hi <= s0 {
            continue;
        }
        for k in [omega0 + wc, omega0 - wc] {
            acc += 0.5 * linear_exp_integral(a, b, k, s0, hi);
        }
    }
    C64::new(0.0, -1.0) * C64::from_polar(1.0, -omega0 * t) * acc
}

/// ∫_{s0}^{s1} (a + b s) e^{iks} ds
fn linear_exp_integral(a: f64, b: f64, k: f64, s0: f64, s1: f64) -> C64 {
    if k.abs() < 1e-12 {
        return C64::new(a * (s1 - s0) + 0.5 * b * (s1 * s1 - s0 * s0), 0.0);
    }
    let i = C64::new(0.0, 1.0);
    let anti = |s: f64| {
        let e = C64::from_polar(1.0, k * s);
        (a + b * s) * e / (i * k) + b * e / (k * k)
    };
    anti(s1) - anti(s0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub amplitude: f64,
    /// ⟨b†b⟩ at drive shut-off for the returned amplitude.
    pub photons: f64,
    /// (amplitude, ⟨b†b⟩) for every probe, in order.
    pub probes: Vec<(f64, f64)>,
}

/// Relative tolerance on ⟨b†b⟩ at shut-off.
pub const CALIBRATION_TOL: f64 = 0.01;
pub const CALIBRATION_MAX_PROBES: usize = 30;

/// Finds the drive amplitude giving ⟨b†b⟩ = target at drive shut-off.
///
/// Each probe propagates H_s without the fluorescence mode from its ground
/// state. The search works on √⟨b†b⟩, which is close to linear in the
/// amplitude: a closed-form first guess, then regula falsi (Illinois) inside a
/// bracket with bisection as fallback.
pub fn calibrate_pump(scenario: &Scenario) -> Result<Calibration> {
    let (envelope, target) = match scenario.init {
        InitialState::Pumped { envelope, target, .. } => (envelope, target),
        InitialState::Coherent { .. } => {
            return Err(Error::InvalidParameter {
                name: "init",
                reason: "pump calibration needs a pumped initial state".into(),
            })
        }
    };
    if target == 0.0 {
        return Ok(Calibration {
            amplitude: 0.0,
            photons: 0.0,
            probes: vec![],
        });
    }
    let reduced = scenario.with_space(shape_with(scenario.space, scenario.space.n_cav, 1));
    let molecular = molecular_ground_state(&reduced)?;
    let start = dressed_ground_state(&reduced, &molecular)?;
    let ham = reduced.hamiltonian(scenario.omega0)?;
    let off_steps = ((envelope.off_time() / scenario.krylov.dt) - 1e-9).ceil() as usize;
    let probe = |g: f64| -> Result<f64> {
        let mut s = reduced.with_drive_amplitude(g);
        s.t_end = off_steps.max(1) as f64 * scenario.krylov.dt;
        let mut run = Propagation::new(&s, &ham, start.amplitudes.clone())?;
        while run.step < s.n_steps() {
            run.step_once()?;
        }
        Ok(photon_number(ham.space(), &run.psi, Mode::Cavity))
    };

    let unit = envelope.with_amplitude(1.0);
    let k = driven_cavity_alpha(&unit, scenario.omega0, envelope.off_time()).norm();
    let s_star = target.sqrt();
    let mut g = if k > 1e-12 { s_star / k } else { 1.0 };
    let mut probes = Vec::new();
    let mut lo: (f64, f64) = (0.0, -s_star);
    let mut hi: Option<(f64, f64)> = None;
    let mut side = 0i8;
    for _ in 0..CALIBRATION_MAX_PROBES {
        let n = probe(g)?;
        probes.push((g, n));
        if (n - target).abs() <= CALIBRATION_TOL * target {
            return Ok(Calibration {
                amplitude: g,
                photons: n,
                probes,
            });
        }
        let r = n.sqrt() - s_star;
        if r < 0.0 {
            lo = (g, r);
            if side == -1 {
                if let Some(h) = hi.as_mut() {
                    h.1 *= 0.5;
                }
            }
            side = -1;
        } else {
            hi = Some((g, r));
            if side == 1 {
                lo.1 *= 0.5;
            }
            side = 1;
        }
        g = match hi {
            None => {
                if n > 0.0 {
                    (g * s_star / n.sqrt()).max(1.01 * g).min(4.0 * g)
                } else {
                    2.0 * g
                }
            }
            Some((gh, rh)) => {
                let (gl, rl) = lo;
                let x = gl - rl * (gh - gl) / (rh - rl);
                if x.is_finite() && x > gl && x < gh {
                    x
                } else {
                    0.5 * (gl + gh)
                }
            }
        };
    }
    let history = probes
        .iter()
        .map(|(g, n)| format!("g_d={g:.6} -> n={n:.6}"))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::Calibration {
        probes: probes.len(),
        history,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobFailure {
    pub index: usize,
    pub omega_f: f64,
    pub class: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub omega_scan: Vec<f64>,
    pub times: Vec<f64>,
    /// P(ω′, t): one row per scan point, empty for failed jobs.
    pub probability: Vec<Vec<f64>>,
    pub snapshots: Vec<Vec<Snapshot>>,
    pub bath_traces: Vec<Vec<BathSample>>,
    pub failures: Vec<JobFailure>,
    /// Nuclear grid (empty for rigid runs).
    pub grid: Vec<f64>,
    /// Scenario actually run (pump amplitude resolved).
    pub resolved: Scenario,
    pub calibration: Option<Calibration>,
}

impl SpectrumResult {
    /// Row of P at the snapshot nearest to `t`.
    pub fn row_at(&self, t: f64) -> Vec<f64> {
        let k = nearest(&self.times, t);
        self.probability
            .iter()
            .map(|r| r.get(k).copied().unwrap_or(f64::NAN))
            .collect()
    }
}

fn nearest(xs: &[f64], x: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map_or(0, |(i, _)| i)
}

#[derive(Clone, Copy)]
pub struct SweepOptions<'a> {
    pub workers: usize,
    pub checkpoint_every: usize,
    pub store: Option<&'a dyn CheckpointStore>,
}

impl Default for SweepOptions<'_> {
    fn default() -> Self {
        SweepOptions {
            workers: 1,
            checkpoint_every: 0,
            store: None,
        }
    }
}

/// Resolves the pump amplitude (calibrating when asked).
pub fn resolve(scenario: &Scenario) -> Result<(Scenario, Option<Calibration>)> {
    scenario.validate()?;
    match scenario.init {
        InitialState::Pumped { calibrate: true, .. } => {
            let cal = calibrate_pump(scenario)?;
            Ok((scenario.with_drive_amplitude(cal.amplitude), Some(cal)))
        }
        _ => Ok((scenario.clone(), None)),
    }
}

/// Runs one full propagation per ω′ on a pool of `workers` threads.
pub fn sweep_spectrum(scenario: &Scenario, opts: SweepOptions<'_>) -> Result<SpectrumResult> {
    let (resolved, calibration) = resolve(scenario)?;
    let s = &resolved;
    let molecular = molecular_ground_state(s)?;
    let coherent = match s.init {
        InitialState::Coherent { beta } => Some(coherent_initial_state(beta, &s.space, &molecular)?),
        InitialState::Pumped { .. } => None,
    };
    let dressed = match s.init {
        InitialState::Pumped { .. } => Some(dressed_ground_state(s, &molecular)?),
        InitialState::Coherent { .. } => None,
    };
    let job = |i: usize, w: f64| -> Result<JobResult> {
        let ham = s.hamiltonian(w)?;
        let psi0 = match (&coherent, &dressed) {
            (Some(c), _) => c.amplitudes.clone(),
            (None, Some(d)) => full_ground_state(s, w, d)?.amplitudes,
            _ => unreachable!(),
        };
        let jo = JobOptions {
            keep_density: i == 0 && s.space.n_grid > 1,
            checkpoint_every: opts.checkpoint_every,
            store: opts.store,
            job: i,
        };
        run_trajectory(s, &ham, psi0, jo)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter {
            name: "workers",
            reason: e.to_string(),
        })?;
    let slots: Vec<Mutex<Option<Result<JobResult>>>> = s.omega_scan.iter().map(|_| Mutex::new(None)).collect();
    pool.install(|| {
        s.omega_scan.par_iter().enumerate().for_each(|(i, &w)| {
            let r = job(i, w);
            *slots[i].lock().unwrap() = Some(r);
        });
    });

    let times = s.snapshot_times();
    let mut probability = Vec::new();
    let mut snapshots = Vec::new();
    let mut bath_traces = Vec::new();
    let mut failures = Vec::new();
    for (i, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().unwrap().expect("every job ran") {
            Ok(r) => {
                probability.push(r.snapshots.iter().map(|x| x.p_fluor).collect());
                snapshots.push(r.snapshots);
                bath_traces.push(r.bath_trace);
            }
            Err(e) => {
                failures.push(JobFailure {
                    index: i,
                    omega_f: s.omega_scan[i],
                    class: e.class(),
                    message: e.to_string(),
                });
                probability.push(vec![]);
                snapshots.push(vec![]);
                bath_traces.push(vec![]);
            }
        }
    }
    let grid = if s.space.n_grid > 1 {
        HilbertSpace::new(s.space)?.grid().to_vec()
    } else {
        vec![]
    };
    Ok(SpectrumResult {
        omega_scan: s.omega_scan.clone(),
        times,
        probability,
        snapshots,
        bath_traces,
        failures,
        grid,
        resolved: resolved.clone(),
        calibration,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub omega: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Interior local maxima whose topographic prominence is at least
/// `min_prominence`. Plateaus report their middle sample.
pub fn detect_peaks(omega: &[f64], row: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = row.len().min(omega.len());
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if row[i] > row[i - 1] {
            let mut j = i;
            while j + 1 < n && row[j + 1] == row[i] {
                j += 1;
            }
            if j + 1 < n && row[j + 1] < row[i] {
                let idx = (i + j) / 2;
                let h = row[i];
                let mut left = h;
                for k in (0..i).rev() {
                    if row[k] > h {
                        break;
                    }
                    left = left.min(row[k]);
                }
                let mut right = h;
                for &v in &row[j + 1..n] {
                    if v > h {
                        break;
                    }
                    right = right.min(v);
                }
                let prominence = h - left.max(right);
                if prominence >= min_prominence {
                    peaks.push(Peak {
                        index: idx,
                        omega: omega[idx],
                        height: h,
                        prominence,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Cavity,
    Fluorescence,
    Grid,
    TimeStep,
}

impl Refinement {
    pub const ALL: [Refinement; 4] = [
        Refinement::Cavity,
        Refinement::Fluorescence,
        Refinement::Grid,
        Refinement::TimeStep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Refinement::Cavity => "n_cav",
            Refinement::Fluorescence => "n_flu",
            Refinement::Grid => "n_grid",
            Refinement::TimeStep => "dt",
        }
    }

    /// The refined scenario, or `None` when the axis does not apply (rigid grid).
    pub fn apply(&self, s: &Scenario) -> Option<Scenario> {
        let mut r = s.clone();
        match self {
            Refinement::Cavity => r.space.n_cav *= 2,
            Refinement::Fluorescence => r.space.n_flu *= 2,
            // halve Δx so the refined grid contains the original points
            Refinement::Grid => {
                if s.space.n_grid < 2 {
                    return None;
                }
                r.space.n_grid = 2 * s.space.n_grid - 1;
            }
            Refinement::TimeStep => {
                r.krylov.dt *= 0.5;
                r.snapshot_every *= 2;
            }
        }
        Some(r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceEntry {
    pub refinement: Refinement,
    /// max |ΔP| / max |P| over the compared (ω′, t) points.
    pub relative_change: f64,
    pub max_abs_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub baseline: SpectrumResult,
    pub entries: Vec<ConvergenceEntry>,
}

impl ConvergenceReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.relative_change).fold(0.0, f64::max)
    }
}

/// Relative change between two spectra at the baseline's snapshot times.
pub fn spectrum_change(base: &SpectrumResult, other: &SpectrumResult) -> (f64, f64) {
    let mut dmax = 0.0f64;
    let mut pmax = 0.0f64;
    for (i, row) in base.probability.iter().enumerate() {
        for (k, &t) in base.times.iter().enumerate() {
            let j = nearest(&other.times, t);
            let (Some(&p), Some(&q)) = (row.get(k), other.probability[i].get(j)) else {
                continue;
            };
            pmax = pmax.max(p.abs());
            dmax = dmax.max((p - q).abs());
        }
    }
    let rel = if pmax > 0.0 {
        dmax / pmax
    } else if dmax == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (rel, dmax)
}

/// Repeats the sweep with each listed axis refined once. The pump amplitude
/// found for the baseline is reused by every refined run.
pub fn convergence(
    scenario: &Scenario,
    refinements: &[Refinement],
    opts: SweepOptions<'_>,
) -> Result<ConvergenceReport> {
    let opts = SweepOptions { store: None, ..opts };
    let baseline = sweep_spectrum(scenario, opts)?;
    let resolved = baseline.resolved.clone();
    let mut entries = Vec::new();
    for r in refinements {
        let Some(refined) = r.apply(&resolved) else {
            continue;
        };
        let other = sweep_spectrum(&refined, opts)?;
        let (rel, abs) = spectrum_change(&baseline, &other);
        entries.push(ConvergenceEntry {
            refinement: *r,
            relative_change: rel,
            max_abs_change: abs,
        });
    }
    Ok(ConvergenceReport { baseline, entries })
}
