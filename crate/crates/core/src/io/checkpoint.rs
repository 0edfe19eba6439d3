//! Checkpoint directory: per-job little-endian binary payloads with text
//! manifests, plus the resolved scenario they belong to.
//!
//! ```text
//! <dir>/checkpoint.txt     format line, scenario hashes
//! <dir>/resolved.toml      resolved configuration
//! <dir>/job_<i>.manifest   key = value lines, see `Manifest`
//! <dir>/job_<i>.bin        payload, layout below
//! ```
//!
//! Payload (all u64/f64 little-endian): ψ as (re, im) pairs; bath x, p, t;
//! snapshots; bath trace. Counts live in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bath::BathState;
use crate::error::{Error, Result};
use crate::hilbert::C64;
use crate::observables::Snapshot;
use crate::scenarios::{BathSample, CheckpointStore, JobCheckpoint, Scenario};

use super::config::{parse_config, scenario_hash, RunConfig};
use super::output::RunWriter;

pub const CHECKPOINT_FORMAT: &str = "molcav-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn f(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn opt(&mut self, x: Option<f64>) {
        self.u(x.is_some() as u64);
        self.f(x.unwrap_or(0.0));
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Decoder<'_> {
    fn word(&mut self) -> Result<[u8; 8]> {
        let w = self
            .bytes
            .get(self.at..self.at + 8)
            .ok_or_else(|| Error::Checkpoint("payload truncated".into()))?;
        self.at += 8;
        Ok(w.try_into().unwrap())
    }
    fn f(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.word()?))
    }
    fn u(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.word()?))
    }
    fn opt(&mut self) -> Result<Option<f64>> {
        let flag = self.u()?;
        let x = self.f()?;
        Ok((flag != 0).then_some(x))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u()? as usize;
        if n > (self.bytes.len() - self.at) / 8 {
            return Err(Error::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }
}

/// Text manifest of one job checkpoint.
#[derive(Clone, Debug, PartialEq)]
struct Manifest {
    scenario: String,
    job: usize,
    omega_bits: u64,
    step: usize,
    finished: bool,
    dim: usize,
    n_osc: Option<usize>,
    n_snapshots: usize,
    n_trace: usize,
    payload_sha256: String,
}

impl Manifest {
    fn render(&self) -> String {
        format!(
            "format = {CHECKPOINT_FORMAT}\nversion = {CHECKPOINT_VERSION}\nscenario_sha256 = {}\njob = {}\nomega_prime_bits = {:016x}\nstep = {}\nfinished = {}\ndim = {}\nn_osc = {}\nn_snapshots = {}\nn_trace = {}\npayload_sha256 = {}\n",
            self.scenario,
            self.job,
            self.omega_bits,
            self.step,
            self.finished,
            self.dim,
            self.n_osc.map_or_else(|| "none".into(), |n| n.to_string()),
            self.n_snapshots,
            self.n_trace,
            self.payload_sha256
        )
    }

    fn parse(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad manifest line \"{line}\"")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{k}`")))
        };
        let bad = |k: &str| Error::Checkpoint(format!("manifest field `{k}` is malformed"));
        if get("format")? != CHECKPOINT_FORMAT {
            return Err(bad("format"));
        }
        let version: u32 = get("version")?.parse().map_err(|_| bad("version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(k)) };
        Ok(Manifest {
            scenario: get("scenario_sha256")?,
            job: num("job")?,
            omega_bits: u64::from_str_radix(&get("omega_prime_bits")?, 16).map_err(|_| bad("omega_prime_bits"))?,
            step: num("step")?,
            finished: get("finished")?.parse().map_err(|_| bad("finished"))?,
            dim: num("dim")?,
            n_osc: match get("n_osc")?.as_str() {
                "none" => None,
                v => Some(v.parse().map_err(|_| bad("n_osc"))?),
            },
            n_snapshots: num("n_snapshots")?,
            n_trace: num("n_trace")?,
            payload_sha256: get("payload_sha256")?,
        })
    }
}

fn encode(cp: &JobCheckpoint) -> Vec<u8> {
    let mut e = Encoder::default();
    for z in &cp.psi {
        e.f(z.re);
        e.f(z.im);
    }
    if let Some(b) = &cp.bath {
        b.x.iter().for_each(|&v| e.f(v));
        b.p.iter().for_each(|&v| e.f(v));
        e.f(b.t);
    }
    for s in &cp.snapshots {
        for v in [s.t, s.p_fluor, s.n_cav, s.n_flu] {
            e.f(v);
        }
        e.opt(s.parity);
        for v in [s.n_excited, s.norm, s.energy] {
            e.f(v);
        }
        e.opt(s.p_diss);
        match &s.nuclear_density {
            Some(d) => {
                e.u(1 + d.len() as u64);
                d.iter().for_each(|&v| e.f(v));
            }
            None => e.u(0),
        }
    }
    for b in &cp.bath_trace {
        for v in [b.t, b.feedback, b.bath_energy, b.coupling_energy] {
            e.f(v);
        }
    }
    e.0
}

fn decode(m: &Manifest, bytes: &[u8]) -> Result<JobCheckpoint> {
    let mut d = Decoder { bytes, at: 0 };
    let mut psi = Vec::with_capacity(m.dim);
    for _ in 0..m.dim {
        let re = d.f()?;
        psi.push(C64::new(re, d.f()?));
    }
    let bath = match m.n_osc {
        Some(n) => {
            let x = (0..n).map(|_| d.f()).collect::<Result<Vec<_>>>()?;
            let p = (0..n).map(|_| d.f()).collect::<Result<Vec<_>>>()?;
            Some(BathState { x, p, t: d.f()? })
        }
        None => None,
    };
    let mut snapshots = Vec::with_capacity(m.n_snapshots);
    for _ in 0..m.n_snapshots {
        let (t, p_fluor, n_cav, n_flu) = (d.f()?, d.f()?, d.f()?, d.f()?);
        let parity = d.opt()?;
        let (n_excited, norm, energy) = (d.f()?, d.f()?, d.f()?);
        let p_diss = d.opt()?;
        let nuclear_density = match d.len()? {
            0 => None,
            n => Some((0..n - 1).map(|_| d.f()).collect::<Result<Vec<_>>>()?),
        };
        snapshots.push(Snapshot {
            t,
            p_fluor,
            n_cav,
            n_flu,
            parity,
            nuclear_density,
            n_excited,
            norm,
            energy,
            p_diss,
        });
    }
    let mut bath_trace = Vec::with_capacity(m.n_trace);
    for _ in 0..m.n_trace {
        bath_trace.push(BathSample {
            t: d.f()?,
            feedback: d.f()?,
            bath_energy: d.f()?,
            coupling_energy: d.f()?,
        });
    }
    if d.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes in payload".into()));
    }
    Ok(JobCheckpoint {
        job: m.job,
        omega_f: f64::from_bits(m.omega_bits),
        step: m.step,
        psi,
        bath,
        snapshots,
        bath_trace,
        finished: m.finished,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Checkpoint store backed by a directory; saves go through a `RunWriter`.
pub struct DirCheckpointStore {
    writer: RunWriter,
    scenario: String,
}

impl DirCheckpointStore {
    /// Starts a fresh checkpoint directory for the resolved `cfg`.
    pub fn create(dir: impl Into<PathBuf>, cfg: &RunConfig) -> Result<Self> {
        let writer = RunWriter::new(dir)?;
        let scenario = scenario_hash(&cfg.scenario);
        writer.submit(
            "checkpoint.txt",
            format!("format = {CHECKPOINT_FORMAT}\nversion = {CHECKPOINT_VERSION}\nscenario_sha256 = {scenario}\n")
                .into_bytes(),
        )?;
        writer.submit("resolved.toml", super::config::emit_config(cfg).into_bytes())?;
        Ok(DirCheckpointStore { writer, scenario })
    }

    /// Reopens a checkpoint directory, returning the stored configuration.
    pub fn open(dir: impl Into<PathBuf>) -> Result<(Self, RunConfig)> {
        let dir = dir.into();
        let head = String::from_utf8_lossy(&read(&dir.join("checkpoint.txt"))?).into_owned();
        let mut scenario = None;
        for line in head.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match (k.trim(), v.trim()) {
                    ("format", f) if f != CHECKPOINT_FORMAT => {
                        return Err(Error::Checkpoint(format!("not a checkpoint directory: format {f}")))
                    }
                    ("version", v) if v != CHECKPOINT_VERSION.to_string() => {
                        return Err(Error::Checkpoint(format!("unsupported checkpoint version {v}")))
                    }
                    ("scenario_sha256", h) => scenario = Some(h.to_string()),
                    _ => {}
                }
            }
        }
        let scenario = scenario.ok_or_else(|| Error::Checkpoint("checkpoint.txt lacks scenario_sha256".into()))?;
        let text = String::from_utf8_lossy(&read(&dir.join("resolved.toml"))?).into_owned();
        let cfg = parse_config(&text)?;
        if scenario_hash(&cfg.scenario) != scenario {
            return Err(Error::Checkpoint(
                "resolved.toml does not match its recorded hash".into(),
            ));
        }
        Ok((
            DirCheckpointStore {
                writer: RunWriter::new(dir)?,
                scenario,
            },
            cfg,
        ))
    }

    pub fn scenario_hash(&self) -> &str {
        &self.scenario
    }

    /// Errors unless `s` is the scenario this directory was written for.
    pub fn check(&self, s: &Scenario) -> Result<()> {
        if scenario_hash(s) == self.scenario {
            Ok(())
        } else {
            Err(Error::Checkpoint("checkpoint belongs to a different scenario".into()))
        }
    }

    /// Waits for pending writes.
    pub fn finish(self) -> Result<()> {
        self.writer.finish()
    }

    fn stem(job: usize) -> String {
        format!("job_{job}")
    }
}

impl CheckpointStore for DirCheckpointStore {
    fn load(&self, job: usize) -> Result<Option<JobCheckpoint>> {
        let dir = self.writer.dir();
        let mpath = dir.join(format!("{}.manifest", Self::stem(job)));
        if !mpath.exists() {
            return Ok(None);
        }
        let m = Manifest::parse(&String::from_utf8_lossy(&read(&mpath)?))?;
        if m.scenario != self.scenario {
            return Err(Error::Checkpoint(format!(
                "{} belongs to a different scenario",
                mpath.display()
            )));
        }
        if m.job != job {
            return Err(Error::Checkpoint(format!("{} holds job {}", mpath.display(), m.job)));
        }
        let bytes = read(&dir.join(format!("{}.bin", Self::stem(job))))?;
        if hex(&Sha256::digest(&bytes)) != m.payload_sha256 {
            return Err(Error::Checkpoint(format!("payload of job {job} fails its checksum")));
        }
        decode(&m, &bytes).map(Some)
    }

    fn save(&self, cp: &JobCheckpoint) -> Result<()> {
        let bytes = encode(cp);
        let m = Manifest {
            scenario: self.scenario.clone(),
            job: cp.job,
            omega_bits: cp.omega_f.to_bits(),
            step: cp.step,
            finished: cp.finished,
            dim: cp.psi.len(),
            n_osc: cp.bath.as_ref().map(|b| b.x.len()),
            n_snapshots: cp.snapshots.len(),
            n_trace: cp.bath_trace.len(),
            payload_sha256: hex(&Sha256::digest(&bytes)),
        };
        // payload first: a manifest never points at a missing payload
        self.writer.submit(format!("{}.bin", Self::stem(cp.job)), bytes)?;
        self.writer
            .submit(format!("{}.manifest", Self::stem(cp.job)), m.render().into_bytes())
    }
}
