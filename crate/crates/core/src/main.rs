use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use molcav::io::config::emit_config;
use molcav::io::output::num;
use molcav::io::{parse_config, write_run, DirCheckpointStore, RunConfig, RunWriter};
use molcav::model::{bo_surface, ElectronicModel, Terms};
use molcav::observables::Snapshot;
use molcav::propagator::{oracle_deviation, KrylovConfig};
use molcav::scenarios::{
    calibrate_pump, coherent_initial_state, convergence, dressed_ground_state, full_ground_state, linspace,
    molecular_ground_state, resolve, sweep_spectrum, InitialState, Refinement, SweepOptions,
};
use molcav::{Error, Result};

/// Exact wavefunction dynamics of a molecule in a pumped, leaky cavity.
#[derive(Parser)]
#[command(name = "molcav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initial state of the configured scenario at the first ω′ of the scan.
    GroundState(Common),
    /// ω′ sweep; writes spectrum.csv, snapshots.csv, density and provenance files.
    Spectrum(Common),
    /// Pump amplitude giving the configured cavity photon number.
    CalibratePump(Common),
    /// Born-Oppenheimer ground-state surface of the dimer.
    BoSurface(BoArgs),
    /// Krylov step against the dense exponential on a random instance.
    OracleCompare(OracleArgs),
    /// Doubling protocol for N_c, N_f, N_R and 1/dt.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Flags of the subcommands that run without a configuration.
#[derive(Args)]
struct Optional {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Optional {
    fn common(&self) -> Common {
        Common {
            config: self.config.clone(),
            out: self.out.clone(),
            workers: None,
            resume: None,
        }
    }
}

#[derive(Args)]
struct BoArgs {
    #[command(flatten)]
    common: Optional,
    #[arg(long, default_value_t = 0.5)]
    x_min: f64,
    #[arg(long, default_value_t = 12.0)]
    x_max: f64,
    #[arg(long, default_value_t = 400)]
    points: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Optional,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

/// Failures that are not library errors.
struct Failure {
    class: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::GroundState(c) => ground_state_cmd(&c),
        Command::Spectrum(c) => spectrum_cmd(&c),
        Command::CalibratePump(c) => calibrate_cmd(&c),
        Command::BoSurface(a) => bo_surface_cmd(&a),
        Command::OracleCompare(a) => oracle_cmd(&a),
        Command::Convergence(c) => convergence_cmd(&c),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.class, f.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn usage(message: &str) -> Failure {
    Failure {
        class: "usage",
        message: message.into(),
    }
}

fn load(c: &Common) -> std::result::Result<RunConfig, Failure> {
    let path = c.config.as_ref().ok_or_else(|| usage("--config <path> is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        class: "io",
        message: format!("{}: {e}", path.display()),
    })?;
    let mut cfg = parse_config(&text)?;
    apply_flags(&mut cfg, c);
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, c: &Common) {
    if let Some(w) = c.workers {
        cfg.workers = w.max(1);
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
}

fn write_text(out: Option<&Path>, name: &str, text: String) -> Result<()> {
    match out {
        Some(dir) => {
            let w = RunWriter::new(dir)?;
            w.submit(name, text.into_bytes())?;
            w.finish()
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ground_state_cmd(c: &Common) -> Outcome {
    let cfg = load(c)?;
    let s = &cfg.scenario;
    let w = s.omega_scan.first().copied().unwrap_or(s.omega0);
    let (s, _) = resolve(s)?;
    let mol = molecular_ground_state(&s)?;
    let psi = match s.init {
        InitialState::Coherent { beta } => coherent_initial_state(beta, &s.space, &mol)?,
        InitialState::Pumped { .. } => full_ground_state(&s, w, &dressed_ground_state(&s, &mol)?)?,
    };
    let ham = s.hamiltonian(w)?;
    let snap = Snapshot::capture(&ham, 0.0, &psi.amplitudes, s.effective_r_cut(), true)?;
    let coeffs = Default::default();
    let energy = ham.expectation(&coeffs, Terms::SYSTEM, &psi.amplitudes);
    println!("omega_prime {w}");
    println!("energy {}", num(energy));
    println!("n_cav {}", num(snap.n_cav));
    println!("n_excited {}", num(snap.n_excited));
    if let Some(p) = snap.parity {
        println!("parity {}", num(p));
    }
    if let Some(d) = &snap.nuclear_density {
        let grid = ham.space().grid();
        let peak = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap_or(0);
        println!("density_peak_x {}", num(grid[peak]));
        if let Some(out) = &cfg.out {
            let csv = molcav::io::output::density_csv(grid, d);
            write_text(Some(out), "ground_state_density.csv", csv)?;
        }
    }
    Ok(())
}

fn spectrum_cmd(c: &Common) -> Outcome {
    let (cfg, store, calibration) = match &c.resume {
        Some(dir) => {
            let (store, mut stored) = DirCheckpointStore::open(dir)?;
            if c.config.is_some() {
                // a fresh config must resolve to the stored scenario
                let given = load(c)?.scenario;
                let given = match (given.init, stored.scenario.init) {
                    (InitialState::Pumped { calibrate: true, .. }, InitialState::Pumped { envelope, .. }) => {
                        given.with_drive_amplitude(envelope.amplitude)
                    }
                    _ => given,
                };
                store.check(&given)?;
            }
            apply_flags(&mut stored, c);
            (stored, Some(store), None)
        }
        None => {
            let mut cfg = load(c)?;
            let (resolved, calibration) = resolve(&cfg.scenario)?;
            if let Some(cal) = &calibration {
                eprintln!(
                    "calibrated amplitude {} ({} probes)",
                    num(cal.amplitude),
                    cal.probes.len()
                );
            }
            cfg.scenario = resolved;
            let store = match (&cfg.out, cfg.checkpoint_every) {
                (Some(out), n) if n > 0 => Some(DirCheckpointStore::create(out.join("checkpoint"), &cfg)?),
                _ => None,
            };
            (cfg, store, calibration)
        }
    };
    let out = cfg.out.clone().ok_or_else(|| usage("--out <dir> is required"))?;
    let result = sweep_spectrum(
        &cfg.scenario,
        SweepOptions {
            workers: cfg.workers,
            checkpoint_every: cfg.checkpoint_every,
            store: store.as_ref().map(|s| s as &dyn molcav::scenarios::CheckpointStore),
        },
    );
    if let Some(s) = store {
        s.finish()?;
    }
    let mut result = result?;
    if result.calibration.is_none() {
        result.calibration = calibration;
    }
    write_run(&result, &cfg, &out)?;
    for f in &result.failures {
        eprintln!(
            "job {} (omega_prime {}) failed: {}: {}",
            f.index, f.omega_f, f.class, f.message
        );
    }
    println!(
        "{} of {} scan points written to {}",
        result.omega_scan.len() - result.failures.len(),
        result.omega_scan.len(),
        out.display()
    );
    if result.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            class: "partial",
            message: format!("{} jobs failed, see failures.csv", result.failures.len()),
        })
    }
}

fn calibrate_cmd(c: &Common) -> Outcome {
    let cfg = load(c)?;
    if !matches!(cfg.scenario.init, InitialState::Pumped { .. }) {
        return Err(usage("calibrate-pump needs init.kind = \"pumped\""));
    }
    let cal = calibrate_pump(&cfg.scenario)?;
    for (g, n) in &cal.probes {
        println!("probe {} {}", num(*g), num(*n));
    }
    println!("amplitude {}", num(cal.amplitude));
    println!("photons {}", num(cal.photons));
    if let Some(out) = &cfg.out {
        let resolved = RunConfig {
            scenario: cfg.scenario.with_drive_amplitude(cal.amplitude),
            ..cfg.clone()
        };
        write_text(Some(out), "calibrated.toml", emit_config(&resolved))?;
    }
    Ok(())
}

fn bo_surface_cmd(a: &BoArgs) -> Outcome {
    let params = match &a.common.config {
        Some(_) => match load(&a.common.common())?.scenario.model {
            ElectronicModel::Dimer(p) => p,
            ElectronicModel::Tls { .. } => return Err(usage("bo-surface needs model.kind = \"dimer\"")),
        },
        None => Default::default(),
    };
    if !(a.x_min > 0.0 && a.x_max > a.x_min && a.points >= 2) {
        return Err(usage("need 0 < x_min < x_max and points >= 2"));
    }
    let x = linspace(a.x_min, a.x_max, a.points);
    let e = bo_surface(&x, &params);
    let mut csv = String::from("x,energy\n");
    for (xi, ei) in x.iter().zip(&e) {
        let _ = writeln!(csv, "{},{}", num(*xi), num(*ei));
    }
    write_text(a.common.out.as_deref(), "bo_surface.csv", csv)?;
    let k = (0..e.len()).min_by(|&i, &j| e[i].total_cmp(&e[j])).unwrap_or(0);
    eprintln!("minimum {} at x = {}", num(e[k]), num(x[k]));
    Ok(())
}

fn oracle_cmd(a: &OracleArgs) -> Outcome {
    let krylov = match &a.common.config {
        Some(_) => load(&a.common.common())?.scenario.krylov,
        None => KrylovConfig {
            krylov_dim: 30,
            tol: 1e-12,
            ..Default::default()
        },
    };
    let dev = oracle_deviation(a.n, a.dt, &krylov, a.seed)?;
    println!("max deviation {dev:.3e} (N = {}, dt = {})", a.n, a.dt);
    if dev < a.tolerance {
        Ok(())
    } else {
        Err(Failure {
            class: "numerical",
            message: format!("deviation {dev:.3e} exceeds {:.1e}", a.tolerance),
        })
    }
}

fn convergence_cmd(c: &Common) -> Outcome {
    let cfg = load(c)?;
    let opts = SweepOptions {
        workers: cfg.workers,
        ..Default::default()
    };
    let report = convergence(&cfg.scenario, &Refinement::ALL, opts)?;
    let mut csv = String::from("refinement,relative_change,max_abs_change\n");
    for e in &report.entries {
        println!(
            "{:<12} relative {:.3e} absolute {:.3e}",
            e.refinement.name(),
            e.relative_change,
            e.max_abs_change
        );
        let _ = writeln!(
            csv,
            "{},{},{}",
            e.refinement.name(),
            num(e.relative_change),
            num(e.max_abs_change)
        );
    }
    if let Some(out) = &cfg.out {
        write_run(&report.baseline, &cfg, out)?;
        write_text(Some(out), "convergence.csv", csv)?;
    }
    let worst = report.worst();
    if worst < 0.01 {
        Ok(())
    } else {
        Err(Failure {
            class: "not-converged",
            message: format!("largest relative change {worst:.3e} is not below 1e-2"),
        })
    }
}
