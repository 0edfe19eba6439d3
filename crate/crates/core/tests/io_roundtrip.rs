mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::*;
use molcav::bath::BathParams;
use molcav::io::output::{density_file_name, spectrum_csv};
use molcav::io::{emit_config, parse_config, write_run, DirCheckpointStore, RunConfig};
use molcav::scenarios::*;
use molcav::{Error, Result};

fn config(s: Scenario) -> RunConfig {
    RunConfig {
        scenario: s,
        workers: 1,
        checkpoint_every: 0,
        out: None,
    }
}

fn read_spectrum(text: &str) -> Vec<(f64, f64, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("omega_prime,time,probability"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn empty_scan_gives_header_only() {
    let mut s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    s.omega_scan.clear();
    let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    assert_eq!(spectrum_csv(&r), "omega_prime,time,probability\n");
}

#[test]
fn one_frequency_two_times() {
    let mut s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    s.omega_scan = vec![2.0];
    s.t_end = 1.0;
    s.snapshot_every = 20;
    let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    assert_eq!(r.times, vec![0.0, 1.0]);
    assert_eq!(read_spectrum(&spectrum_csv(&r)).len(), 2);
}

#[test]
fn written_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    let cfg = config(s.clone());
    let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    write_run(&r, &cfg, dir.path()).unwrap();

    let text = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(text.ends_with('\n'));
    let rows = read_spectrum(&text);
    let mut k = 0;
    for (i, w) in r.omega_scan.iter().enumerate() {
        for (j, t) in r.times.iter().enumerate() {
            assert_eq!(rows[k], (*w, *t, r.probability[i][j]));
            k += 1;
        }
    }
    assert!(rows.windows(2).all(|p| (p[0].0, p[0].1) < (p[1].0, p[1].1)));

    let snaps = std::fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    let header = snaps.lines().next().unwrap();
    assert_eq!(
        header,
        "omega_prime,t,p_fluor,n_cav,n_flu,parity,n_excited,norm,energy,p_diss"
    );
    assert_eq!(snaps.lines().count(), 1 + r.omega_scan.len() * r.times.len());
    // TLS rows carry parity and no dissociation
    let first: Vec<&str> = snaps.lines().nth(1).unwrap().split(',').collect();
    assert_ne!(first[5], "NA");
    assert_eq!(first[9], "NA");

    // provenance is itself a config that reproduces the run bitwise
    let prov = std::fs::read_to_string(dir.path().join("provenance.txt")).unwrap();
    assert!(prov.contains("scenario-sha256"));
    let again = parse_config(&prov).unwrap();
    assert_eq!(again.scenario, s);
    let r2 = sweep_spectrum(&again.scenario, SweepOptions::default()).unwrap();
    assert_eq!(spectrum_csv(&r2), text);
    assert!(!dir.path().join("failures.csv").exists());
}

#[test]
fn grid_runs_write_densities() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = grid_dimer(40.0, 21, 0.6, 3.0, InitialState::Coherent { beta: 0.5 });
    s.space.n_cav = 8;
    s.r_cut = Some(2.0);
    s.t_end = 1.0;
    s.omega_scan = vec![2.56];
    let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    write_run(&r, &config(s), dir.path()).unwrap();
    for t in &r.times {
        let text = std::fs::read_to_string(dir.path().join(density_file_name(*t))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,density"));
        let total: f64 = lines
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let snaps = std::fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    let row: Vec<&str> = snaps.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "NA");
    assert_ne!(row[9], "NA");
}

#[test]
fn failures_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    s.krylov.krylov_dim = 2;
    s.krylov.dt = 0.5;
    let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    assert!(!r.failures.is_empty());
    write_run(&r, &config(s), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("numerical"));
}

/// Wraps a store and fails every save after the first `budget` ones.
struct Interrupting<'a> {
    inner: &'a DirCheckpointStore,
    budget: AtomicUsize,
}

impl CheckpointStore for Interrupting<'_> {
    fn load(&self, job: usize) -> Result<Option<JobCheckpoint>> {
        self.inner.load(job)
    }
    fn save(&self, cp: &JobCheckpoint) -> Result<()> {
        let left = self.budget.load(Ordering::SeqCst);
        if left == 0 {
            return Err(Error::Checkpoint("interrupted".into()));
        }
        self.budget.store(left - 1, Ordering::SeqCst);
        self.inner.save(cp)
    }
}

fn interrupted_resume_matches(s: Scenario, budget: usize) {
    let every = 7;
    let straight = sweep_spectrum(&s, SweepOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(s.clone());

    let store = DirCheckpointStore::create(dir.path(), &cfg).unwrap();
    let cut = Interrupting {
        inner: &store,
        budget: AtomicUsize::new(budget),
    };
    let partial = sweep_spectrum(
        &s,
        SweepOptions {
            workers: 1,
            checkpoint_every: every,
            store: Some(&cut),
        },
    )
    .unwrap();
    assert_eq!(partial.failures.len(), s.omega_scan.len());
    store.finish().unwrap();

    let (store, stored) = DirCheckpointStore::open(dir.path()).unwrap();
    assert_eq!(stored.scenario, s);
    // a resumed job starts from its saved step, not from scratch
    assert!(store.load(0).unwrap().unwrap().step > 0);
    let resumed = sweep_spectrum(
        &s,
        SweepOptions {
            workers: 2,
            checkpoint_every: every,
            store: Some(&store),
        },
    )
    .unwrap();
    store.finish().unwrap();
    assert_eq!(resumed.probability, straight.probability);
    assert_eq!(resumed.snapshots, straight.snapshots);
    assert_eq!(resumed.bath_traces, straight.bath_traces);

    // finished jobs are served from the checkpoint
    let (store, _) = DirCheckpointStore::open(dir.path()).unwrap();
    assert!(store.load(0).unwrap().unwrap().finished);
    let again = sweep_spectrum(
        &s,
        SweepOptions {
            workers: 1,
            checkpoint_every: every,
            store: Some(&store),
        },
    )
    .unwrap();
    assert_eq!(again.probability, straight.probability);
}

#[test]
fn resume_is_bitwise() {
    let mut s = tls(12, 2, pumped(sudden(0.5, 1.5, 1.0)));
    s.t_end = 3.0;
    s.snapshot_every = 10;
    interrupted_resume_matches(s, 4);
}

#[test]
fn resume_with_bath_is_bitwise() {
    let mut s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    s.dissipation = Dissipation::Bath(BathParams {
        n_osc: 40,
        amplitude: 0.05,
        ..Default::default()
    });
    s.t_end = 3.0;
    s.snapshot_every = 10;
    interrupted_resume_matches(s, 2);
}

#[test]
fn foreign_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = tls(12, 2, InitialState::Coherent { beta: 1.0 });
    let store = DirCheckpointStore::create(dir.path(), &config(s.clone())).unwrap();
    let mut other = s.clone();
    other.g_c = 0.2;
    assert!(matches!(store.check(&other), Err(Error::Checkpoint(_))));
    store.check(&s).unwrap();
    store.finish().unwrap();
}

#[test]
fn emitted_config_reparses_identically() {
    let mut s = grid_dimer(40.0, 21, 0.6, 3.0, pumped(trapezoid(0.1, 7.0, 30.0, 2.56)));
    s.dissipation = Dissipation::Bath(BathParams::default());
    s.r_cut = Some(2.5);
    let cfg = RunConfig {
        workers: 4,
        checkpoint_every: 50,
        ..config(s)
    };
    assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
}
