//! Run directory: a single writer thread plus the CSV and provenance files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::sync::Mutex;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::scenarios::{Calibration, SpectrumResult};

use super::config::{emit_config, scenario_hash, RunConfig};

enum Message {
    Write { path: PathBuf, bytes: Vec<u8> },
}

/// Serializes all file writes of one run directory through one thread.
/// Each file is written to a temporary name and renamed into place.
pub struct RunWriter {
    dir: PathBuf,
    tx: Mutex<Option<Sender<Message>>>,
    handle: Option<JoinHandle<Result<()>>>,
}

impl RunWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (tx, rx) = channel::<Message>();
        let handle = std::thread::spawn(move || {
            let mut first = Ok(());
            for msg in rx {
                let Message::Write { path, bytes } = msg;
                if let Err(e) = write_atomic(&path, &bytes) {
                    if first.is_ok() {
                        first = Err(e);
                    }
                }
            }
            first
        });
        Ok(RunWriter {
            dir,
            tx: Mutex::new(Some(tx)),
            handle: Some(handle),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Queues `bytes` for `name`, relative to the run directory.
    pub fn submit(&self, name: impl AsRef<Path>, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        let guard = self.tx.lock().unwrap();
        let sent = guard
            .as_ref()
            .map(|tx| {
                tx.send(Message::Write {
                    path: path.clone(),
                    bytes,
                })
                .is_ok()
            })
            .unwrap_or(false);
        if sent {
            Ok(())
        } else {
            Err(Error::io(path, std::io::Error::other("run writer has stopped")))
        }
    }

    /// Drains the queue and reports the first failed write.
    pub fn finish(mut self) -> Result<()> {
        self.close()
    }

    fn close(&mut self) -> Result<()> {
        self.tx.lock().unwrap().take();
        match self.handle.take() {
            Some(h) => h
                .join()
                .unwrap_or_else(|_| Err(Error::io(&self.dir, std::io::Error::other("run writer panicked")))),
            None => Ok(()),
        }
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Locale-independent decimal text with 17 significant digits, enough to
/// recover the f64 exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

pub fn spectrum_csv(result: &SpectrumResult) -> String {
    let mut s = String::from("omega_prime,time,probability\n");
    for (w, row) in result.omega_scan.iter().zip(&result.probability) {
        for (t, p) in result.times.iter().zip(row) {
            let _ = writeln!(s, "{},{},{}", num(*w), num(*t), num(*p));
        }
    }
    s
}

pub fn snapshots_csv(result: &SpectrumResult) -> String {
    let mut s = String::from("omega_prime,t,p_fluor,n_cav,n_flu,parity,n_excited,norm,energy,p_diss\n");
    for (w, snaps) in result.omega_scan.iter().zip(&result.snapshots) {
        for x in snaps {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                num(*w),
                num(x.t),
                num(x.p_fluor),
                num(x.n_cav),
                num(x.n_flu),
                opt(x.parity),
                num(x.n_excited),
                num(x.norm),
                num(x.energy),
                opt(x.p_diss)
            );
        }
    }
    s
}

pub fn density_csv(grid: &[f64], density: &[f64]) -> String {
    let mut s = String::from("x,density\n");
    for (x, n) in grid.iter().zip(density) {
        let _ = writeln!(s, "{},{}", num(*x), num(*n));
    }
    s
}

/// `density_<t>.csv`, with t in shortest round-trip form.
pub fn density_file_name(t: f64) -> String {
    format!("density_{t}.csv")
}

fn bath_csv(result: &SpectrumResult) -> String {
    let mut s = String::from("omega_prime,t,feedback,bath_energy,coupling_energy\n");
    for (w, trace) in result.omega_scan.iter().zip(&result.bath_traces) {
        for b in trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                num(*w),
                num(b.t),
                num(b.feedback),
                num(b.bath_energy),
                num(b.coupling_energy)
            );
        }
    }
    s
}

fn failures_csv(result: &SpectrumResult) -> String {
    let mut s = String::from("index,omega_prime,class,message\n");
    for f in &result.failures {
        let msg = f.message.replace(['"', '\n'], " ");
        let _ = writeln!(s, "{},{},{},\"{}\"", f.index, num(f.omega_f), f.class, msg);
    }
    s
}

/// Resolved configuration preceded by comment lines; the file is itself a
/// valid configuration document that re-runs the same scenario.
pub fn provenance(cfg: &RunConfig, calibration: Option<&Calibration>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# molcav {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# scenario-sha256 {}", scenario_hash(&cfg.scenario));
    if let Some(c) = calibration {
        let _ = writeln!(
            s,
            "# calibrated amplitude {} gives photons {} after {} probes",
            num(c.amplitude),
            num(c.photons),
            c.probes.len()
        );
    }
    s.push_str(&emit_config(cfg));
    s
}

/// Queues spectrum.csv, snapshots.csv, density files, bath.csv (bath runs),
/// failures.csv (if any job failed) and provenance.txt.
pub fn write_spectrum(result: &SpectrumResult, cfg: &RunConfig, writer: &RunWriter) -> Result<()> {
    writer.submit("spectrum.csv", spectrum_csv(result).into_bytes())?;
    writer.submit("snapshots.csv", snapshots_csv(result).into_bytes())?;
    if let Some(first) = result.snapshots.first() {
        for x in first {
            if let Some(d) = &x.nuclear_density {
                writer.submit(density_file_name(x.t), density_csv(&result.grid, d).into_bytes())?;
            }
        }
    }
    if result.bath_traces.iter().any(|b| !b.is_empty()) {
        writer.submit("bath.csv", bath_csv(result).into_bytes())?;
    }
    if !result.failures.is_empty() {
        writer.submit("failures.csv", failures_csv(result).into_bytes())?;
    }
    let resolved = RunConfig {
        scenario: result.resolved.clone(),
        ..cfg.clone()
    };
    writer.submit(
        "provenance.txt",
        provenance(&resolved, result.calibration.as_ref()).into_bytes(),
    )
}

/// Writes a finished result into `dir` and waits for the files.
pub fn write_run(result: &SpectrumResult, cfg: &RunConfig, dir: impl Into<PathBuf>) -> Result<()> {
    let writer = RunWriter::new(dir)?;
    write_spectrum(result, cfg, &writer)?;
    writer.finish()
}
