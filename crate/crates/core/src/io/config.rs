//! TOML run configuration.
//!
//! Layout (every table optional except `[model]`, `[cavity]` and `[init]`):
//!
//! ```toml
//! t_end = 200.0          # default 200
//! seed = 1               # Lanczos seed, default 1
//! snapshot_every = 50    # steps between snapshots, default 50
//! r_cut = 4.6            # dissociation cut, default 4·r_fixed when on the grid
//!
//! [model]
//! kind = "dimer"         # or "tls" with `gap`
//! mass = 8.0e4           # dimer defaults: 8e4, repulsion 0.6, onsite_u 1,
//!                        # hopping -2, attenuation 0.6, r_fixed 1.156
//! [space]
//! n_cav = 32             # default: smallest cutoff holding |β⟩, 24 when pumped
//! n_flu = 2              # default 2
//! n_grid = 1             # default 1 (rigid); grid_min 0.3, grid_max 12
//!
//! [cavity]
//! omega0 = 2.56          # required
//! g_c = 0.08             # default 0.08
//! g_f = 0.01             # default 0.01
//!
//! [init]
//! kind = "coherent"      # beta
//! # kind = "pumped": target, envelope = "trapezoid" (t1, t2) | "sudden" (ts),
//! # amplitude (omit to calibrate), carrier (default omega0)
//!
//! [dissipation]
//! kind = "exponential"   # default, gamma 0.02; or "none", or "bath" with
//!                        # n_osc 1000, amplitude 0.01, exponent 0.6, delta 0.01
//! [scan]
//! points = 80            # over [0.2, 1.6]·max(ω₀, Ω_R); start/stop override
//! # values = [...]       # explicit list instead
//!
//! [krylov]               # dt 0.02, krylov_dim 12, tol 1e-10, midpoint true
//! [ground]               # tol 1e-9, basis_size 160, max_restarts 60
//! [run]                  # workers (env MOLCAV_WORKERS, else 1), checkpoint_every 0, out
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::BathParams;
use crate::error::{Error, Result};
use crate::hilbert::SpaceShape;
use crate::model::{DriveEnvelope, ElectronicModel, EnvelopeMode, MolecularParams};
use crate::observables::coherent_amplitudes;
use crate::propagator::{GroundStateConfig, KrylovConfig};
use crate::scenarios::{default_scan, linspace, Dissipation, InitialState, Scenario, COHERENT_DEFICIT_MAX};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MOLCAV_WORKERS";

pub const DEFAULT_T_END: f64 = 200.0;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 50;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_G_C: f64 = 0.08;
pub const DEFAULT_G_F: f64 = 0.01;
pub const DEFAULT_GAMMA: f64 = 0.02;
pub const DEFAULT_N_FLU: usize = 2;
pub const DEFAULT_PUMPED_N_CAV: usize = 24;
pub const DEFAULT_SCAN_POINTS: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub workers: usize,
    /// Steps between checkpoints; 0 disables checkpointing.
    pub checkpoint_every: usize,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshot_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_cut: Option<f64>,
    model: Option<ModelDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    space: Option<SpaceDoc>,
    cavity: Option<CavityDoc>,
    init: Option<InitDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dissipation: Option<DissipationDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scan: Option<ScanDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    krylov: Option<KrylovDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground: Option<GroundDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RunDoc>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repulsion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    onsite_u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hopping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attenuation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_fixed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDoc {
    n_cav: Option<usize>,
    n_flu: Option<usize>,
    n_grid: Option<usize>,
    grid_min: Option<f64>,
    grid_max: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CavityDoc {
    omega0: Option<f64>,
    g_c: Option<f64>,
    g_f: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitDoc {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    envelope: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    carrier: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DissipationDoc {
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_osc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KrylovDoc {
    dt: Option<f64>,
    krylov_dim: Option<usize>,
    tol: Option<f64>,
    midpoint: Option<bool>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundDoc {
    tol: Option<f64>,
    basis_size: Option<usize>,
    max_restarts: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
}

/// Parses and validates a configuration document, resolving every default.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: Document = {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut key = e.path().to_string();
            let inner = e.inner();
            let message = inner.message().to_string();
            if let Some(field) = unknown_field(&message) {
                if key.rsplit('.').next() != Some(field.as_str()) {
                    key = join_key(&key, &field);
                }
            }
            let line = locate(text, &key)
                .or_else(|| inner.span().map(|s| line_of(text, s.start)))
                .unwrap_or(0);
            Error::Config { key, line, message }
        })?
    };
    build(doc).map_err(|e| into_config_error(e, text))
}

fn join_key(parent: &str, field: &str) -> String {
    if parent.is_empty() || parent == "." {
        field.to_string()
    } else {
        format!("{parent}.{field}")
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key` (dotted path) in the document, if written there.
fn locate(text: &str, key: &str) -> Option<usize> {
    let (table, name) = match key.rsplit_once('.') {
        Some((t, n)) => (t, n),
        None => ("", key),
    };
    let mut current = String::new();
    let mut table_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            if current == key {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == name {
                    return Some(i + 1);
                }
            }
        }
    }
    table_line
}

/// Maps a validation error to its config key and line.
fn into_config_error(e: Error, text: &str) -> Error {
    let key = match &e {
        Error::Config { key, line: 0, message } => {
            let line = locate(text, key).unwrap_or(0);
            return Error::Config {
                key: key.clone(),
                line,
                message: message.clone(),
            };
        }
        Error::Config { .. } => return e,
        Error::InvalidParameter { name, .. } => param_key(name),
        Error::InvalidShape(_) | Error::ShapeMismatch { .. } => "space".to_string(),
        Error::CutoffTooSmall { .. } => "space.n_cav".to_string(),
        _ => String::new(),
    };
    let line = locate(text, &key).unwrap_or(0);
    Error::Config {
        key,
        line,
        message: e.to_string(),
    }
}

fn param_key(name: &str) -> String {
    let table = match name {
        "mass" | "repulsion" | "onsite_u" | "hopping" | "attenuation" | "r_fixed" | "gap" => "model",
        "omega0" | "g_c" | "g_f" => "cavity",
        "gamma" | "n_osc" | "amplitude" | "exponent" | "delta" => "dissipation",
        "beta" | "target" | "envelope" | "carrier" => "init",
        "dt" | "krylov_dim" | "tol" => "krylov",
        "omega_scan" => return "scan".into(),
        _ => return name.into(),
    };
    format!("{table}.{name}")
}

fn missing(key: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        line: 0,
        message: "missing required key".into(),
    }
}

fn reject(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line: 0,
        message: message.into(),
    }
}

/// Errors if any of the listed keys is set.
fn forbid(table: &str, kind: &str, keys: &[(&str, bool)]) -> Result<()> {
    for (k, set) in keys {
        if *set {
            return Err(reject(
                &format!("{table}.{k}"),
                format!("not valid for kind = \"{kind}\""),
            ));
        }
    }
    Ok(())
}

/// Smallest Fock cutoff holding |β⟩ with deficit at most the coherent bound.
pub fn coherent_cutoff(beta: f64) -> usize {
    (1..=4096)
        .find(|&n| coherent_amplitudes(beta, n).1 <= COHERENT_DEFICIT_MAX)
        .unwrap_or(4096)
}

fn build(doc: Document) -> Result<RunConfig> {
    let m = doc.model.ok_or_else(|| missing("model"))?;
    let model = match m.kind.as_deref().ok_or_else(|| missing("model.kind"))? {
        "dimer" => {
            forbid("model", "dimer", &[("gap", m.gap.is_some())])?;
            let d = MolecularParams::default();
            ElectronicModel::Dimer(MolecularParams {
                mass: m.mass.unwrap_or(d.mass),
                repulsion: m.repulsion.unwrap_or(d.repulsion),
                onsite_u: m.onsite_u.unwrap_or(d.onsite_u),
                hopping: m.hopping.unwrap_or(d.hopping),
                attenuation: m.attenuation.unwrap_or(d.attenuation),
                r_fixed: m.r_fixed.unwrap_or(d.r_fixed),
            })
        }
        "tls" => {
            forbid(
                "model",
                "tls",
                &[
                    ("mass", m.mass.is_some()),
                    ("repulsion", m.repulsion.is_some()),
                    ("onsite_u", m.onsite_u.is_some()),
                    ("hopping", m.hopping.is_some()),
                    ("attenuation", m.attenuation.is_some()),
                    ("r_fixed", m.r_fixed.is_some()),
                ],
            )?;
            ElectronicModel::Tls {
                gap: m.gap.ok_or_else(|| missing("model.gap"))?,
            }
        }
        other => {
            return Err(reject(
                "model.kind",
                format!("expected \"dimer\" or \"tls\", got \"{other}\""),
            ))
        }
    };

    let cav = doc.cavity.ok_or_else(|| missing("cavity"))?;
    let omega0 = cav.omega0.ok_or_else(|| missing("cavity.omega0"))?;

    let i = doc.init.ok_or_else(|| missing("init"))?;
    let init = match i.kind.as_deref().ok_or_else(|| missing("init.kind"))? {
        "coherent" => {
            forbid(
                "init",
                "coherent",
                &[
                    ("target", i.target.is_some()),
                    ("envelope", i.envelope.is_some()),
                    ("t1", i.t1.is_some()),
                    ("t2", i.t2.is_some()),
                    ("ts", i.ts.is_some()),
                    ("amplitude", i.amplitude.is_some()),
                    ("carrier", i.carrier.is_some()),
                ],
            )?;
            InitialState::Coherent {
                beta: i.beta.ok_or_else(|| missing("init.beta"))?,
            }
        }
        "pumped" => {
            forbid("init", "pumped", &[("beta", i.beta.is_some())])?;
            let mode = match i.envelope.as_deref().ok_or_else(|| missing("init.envelope"))? {
                "trapezoid" => {
                    forbid("init", "pumped/trapezoid", &[("ts", i.ts.is_some())])?;
                    EnvelopeMode::Trapezoid {
                        t1: i.t1.ok_or_else(|| missing("init.t1"))?,
                        t2: i.t2.ok_or_else(|| missing("init.t2"))?,
                    }
                }
                "sudden" => {
                    forbid(
                        "init",
                        "pumped/sudden",
                        &[("t1", i.t1.is_some()), ("t2", i.t2.is_some())],
                    )?;
                    EnvelopeMode::Sudden {
                        ts: i.ts.ok_or_else(|| missing("init.ts"))?,
                    }
                }
                other => {
                    return Err(reject(
                        "init.envelope",
                        format!("expected \"trapezoid\" or \"sudden\", got \"{other}\""),
                    ))
                }
            };
            InitialState::Pumped {
                envelope: DriveEnvelope {
                    amplitude: i.amplitude.unwrap_or(0.0),
                    mode,
                    carrier: i.carrier.unwrap_or(omega0),
                },
                target: i.target.ok_or_else(|| missing("init.target"))?,
                calibrate: i.amplitude.is_none(),
            }
        }
        other => {
            return Err(reject(
                "init.kind",
                format!("expected \"coherent\" or \"pumped\", got \"{other}\""),
            ))
        }
    };

    let d = doc.dissipation.unwrap_or_default();
    let dissipation = match d.kind.as_deref().unwrap_or("exponential") {
        "none" => {
            forbid(
                "dissipation",
                "none",
                &[
                    ("gamma", d.gamma.is_some()),
                    ("n_osc", d.n_osc.is_some()),
                    ("amplitude", d.amplitude.is_some()),
                    ("exponent", d.exponent.is_some()),
                    ("delta", d.delta.is_some()),
                ],
            )?;
            Dissipation::None
        }
        "exponential" => {
            forbid(
                "dissipation",
                "exponential",
                &[
                    ("n_osc", d.n_osc.is_some()),
                    ("amplitude", d.amplitude.is_some()),
                    ("exponent", d.exponent.is_some()),
                    ("delta", d.delta.is_some()),
                ],
            )?;
            Dissipation::Exponential {
                gamma: d.gamma.unwrap_or(DEFAULT_GAMMA),
            }
        }
        "bath" => {
            forbid("dissipation", "bath", &[("gamma", d.gamma.is_some())])?;
            let b = BathParams::default();
            Dissipation::Bath(BathParams {
                n_osc: d.n_osc.unwrap_or(b.n_osc),
                amplitude: d.amplitude.unwrap_or(b.amplitude),
                exponent: d.exponent.unwrap_or(b.exponent),
                delta: d.delta.unwrap_or(b.delta),
            })
        }
        other => {
            return Err(reject(
                "dissipation.kind",
                format!("expected \"none\", \"exponential\" or \"bath\", got \"{other}\""),
            ))
        }
    };

    let sp = doc.space.unwrap_or_default();
    let n_cav = match (sp.n_cav, init) {
        (Some(n), _) => n,
        (None, InitialState::Coherent { beta }) if beta.is_finite() => coherent_cutoff(beta),
        (None, _) => DEFAULT_PUMPED_N_CAV,
    };
    let rigid = SpaceShape::rigid(model.n_elec(), n_cav, sp.n_flu.unwrap_or(DEFAULT_N_FLU));
    let space = SpaceShape {
        n_grid: sp.n_grid.unwrap_or(1),
        grid_min: sp.grid_min.unwrap_or(rigid.grid_min),
        grid_max: sp.grid_max.unwrap_or(rigid.grid_max),
        ..rigid
    };

    let kd = KrylovConfig::default();
    let k = doc.krylov.unwrap_or_default();
    let krylov = KrylovConfig {
        dt: k.dt.unwrap_or(kd.dt),
        krylov_dim: k.krylov_dim.unwrap_or(kd.krylov_dim),
        tol: k.tol.unwrap_or(kd.tol),
        midpoint: k.midpoint.unwrap_or(kd.midpoint),
    };
    let gd = GroundStateConfig::default();
    let g = doc.ground.unwrap_or_default();
    let ground = GroundStateConfig {
        tol: g.tol.unwrap_or(gd.tol),
        basis_size: g.basis_size.unwrap_or(gd.basis_size),
        max_restarts: g.max_restarts.unwrap_or(gd.max_restarts),
    };

    let mut scenario = Scenario {
        model,
        space,
        omega0,
        g_c: cav.g_c.unwrap_or(DEFAULT_G_C),
        g_f: cav.g_f.unwrap_or(DEFAULT_G_F),
        init,
        dissipation,
        t_end: doc.t_end.unwrap_or(DEFAULT_T_END),
        omega_scan: vec![],
        seed: doc.seed.unwrap_or(DEFAULT_SEED),
        krylov,
        ground,
        snapshot_every: doc.snapshot_every.unwrap_or(DEFAULT_SNAPSHOT_EVERY),
        r_cut: doc.r_cut,
    };

    let sc = doc.scan.unwrap_or_default();
    scenario.omega_scan = match sc.values {
        Some(v) => {
            forbid(
                "scan",
                "values",
                &[
                    ("points", sc.points.is_some()),
                    ("start", sc.start.is_some()),
                    ("stop", sc.stop.is_some()),
                ],
            )?;
            v
        }
        None => {
            let points = sc.points.unwrap_or(DEFAULT_SCAN_POINTS);
            let top = scenario.omega0.max(scenario.omega_r());
            match (sc.start, sc.stop) {
                (None, None) => default_scan(scenario.omega0, scenario.omega_r(), points),
                (a, b) => linspace(a.unwrap_or(0.2 * top), b.unwrap_or(1.6 * top), points),
            }
        }
    };
    scenario.validate()?;
    if let InitialState::Coherent { beta } = scenario.init {
        let deficit = coherent_amplitudes(beta, scenario.space.n_cav).1;
        if deficit > COHERENT_DEFICIT_MAX {
            return Err(Error::CutoffTooSmall {
                cutoff: scenario.space.n_cav,
                beta,
                deficit,
            });
        }
    }

    let run = doc.run.unwrap_or_default();
    let workers = match run.workers {
        Some(w) => w,
        None => default_workers()?,
    };
    if workers == 0 {
        return Err(reject("run.workers", "must be at least 1"));
    }
    Ok(RunConfig {
        scenario,
        workers,
        checkpoint_every: run.checkpoint_every.unwrap_or(0),
        out: run.out.map(PathBuf::from),
    })
}

/// Worker count from the environment, else 1.
pub fn default_workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config {
            key: WORKERS_ENV.into(),
            line: 0,
            message: format!("expected a positive integer, got \"{v}\""),
        }),
        Err(_) => Ok(1),
    }
}

fn scenario_document(s: &Scenario) -> Document {
    let model = match s.model {
        ElectronicModel::Dimer(p) => ModelDoc {
            kind: Some("dimer".into()),
            mass: Some(p.mass),
            repulsion: Some(p.repulsion),
            onsite_u: Some(p.onsite_u),
            hopping: Some(p.hopping),
            attenuation: Some(p.attenuation),
            r_fixed: Some(p.r_fixed),
            gap: None,
        },
        ElectronicModel::Tls { gap } => ModelDoc {
            kind: Some("tls".into()),
            gap: Some(gap),
            ..Default::default()
        },
    };
    let init = match s.init {
        InitialState::Coherent { beta } => InitDoc {
            kind: Some("coherent".into()),
            beta: Some(beta),
            ..Default::default()
        },
        InitialState::Pumped {
            envelope,
            target,
            calibrate,
        } => {
            let mut d = InitDoc {
                kind: Some("pumped".into()),
                target: Some(target),
                amplitude: (!calibrate).then_some(envelope.amplitude),
                carrier: Some(envelope.carrier),
                ..Default::default()
            };
            match envelope.mode {
                EnvelopeMode::Trapezoid { t1, t2 } => {
                    d.envelope = Some("trapezoid".into());
                    d.t1 = Some(t1);
                    d.t2 = Some(t2);
                }
                EnvelopeMode::Sudden { ts } => {
                    d.envelope = Some("sudden".into());
                    d.ts = Some(ts);
                }
            }
            d
        }
    };
    let dissipation = match s.dissipation {
        Dissipation::None => DissipationDoc {
            kind: Some("none".into()),
            ..Default::default()
        },
        Dissipation::Exponential { gamma } => DissipationDoc {
            kind: Some("exponential".into()),
            gamma: Some(gamma),
            ..Default::default()
        },
        Dissipation::Bath(b) => DissipationDoc {
            kind: Some("bath".into()),
            n_osc: Some(b.n_osc),
            amplitude: Some(b.amplitude),
            exponent: Some(b.exponent),
            delta: Some(b.delta),
            gamma: None,
        },
    };
    Document {
        t_end: Some(s.t_end),
        seed: Some(s.seed),
        snapshot_every: Some(s.snapshot_every),
        r_cut: s.r_cut,
        model: Some(model),
        space: Some(SpaceDoc {
            n_cav: Some(s.space.n_cav),
            n_flu: Some(s.space.n_flu),
            n_grid: Some(s.space.n_grid),
            grid_min: Some(s.space.grid_min),
            grid_max: Some(s.space.grid_max),
        }),
        cavity: Some(CavityDoc {
            omega0: Some(s.omega0),
            g_c: Some(s.g_c),
            g_f: Some(s.g_f),
        }),
        init: Some(init),
        dissipation: Some(dissipation),
        scan: Some(ScanDoc {
            values: Some(s.omega_scan.clone()),
            ..Default::default()
        }),
        krylov: Some(KrylovDoc {
            dt: Some(s.krylov.dt),
            krylov_dim: Some(s.krylov.krylov_dim),
            tol: Some(s.krylov.tol),
            midpoint: Some(s.krylov.midpoint),
        }),
        ground: Some(GroundDoc {
            tol: Some(s.ground.tol),
            basis_size: Some(s.ground.basis_size),
            max_restarts: Some(s.ground.max_restarts),
        }),
        run: None,
    }
}

fn to_toml(doc: &Document) -> String {
    toml::to_string(doc).expect("config documents always serialize")
}

/// Fully resolved document; parsing it gives back `cfg`.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut doc = scenario_document(&cfg.scenario);
    doc.run = Some(RunDoc {
        workers: Some(cfg.workers),
        checkpoint_every: Some(cfg.checkpoint_every),
        out: cfg.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
    });
    to_toml(&doc)
}

/// Canonical text of the physics and numerics (no `[run]` table).
pub fn emit_scenario(s: &Scenario) -> String {
    to_toml(&scenario_document(s))
}

/// sha256 of the canonical scenario text, hex encoded.
pub fn scenario_hash(s: &Scenario) -> String {
    Sha256::digest(emit_scenario(s).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
