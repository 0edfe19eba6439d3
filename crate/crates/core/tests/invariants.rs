mod common;

use common::*;
use molcav::bath::BathParams;
use molcav::io::{emit_config, parse_config, RunConfig};
use molcav::model::{ElectronicModel, MolecularParams};
use molcav::propagator::{oracle_deviation, KrylovConfig};
use molcav::scenarios::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn krylov_matches_dense(n in 4usize..96, dt in 0.01f64..0.1, seed in any::<u64>()) {
        let cfg = KrylovConfig { dt, krylov_dim: 40, tol: 1e-13, midpoint: true };
        let dev = oracle_deviation(n, dt, &cfg, seed).unwrap();
        prop_assert!(dev < 1e-10, "deviation {dev:e}");
    }

    #[test]
    fn resolved_config_round_trips(
        mass in 1.0f64..1e5,
        u in 0.0f64..4.0,
        omega0 in 0.5f64..3.0,
        g_c in 0.0f64..0.2,
        beta in 0.0f64..2.0,
        points in 0usize..20,
        bath in any::<bool>(),
        exponent in 0.0f64..1.0,
        workers in 1usize..9,
    ) {
        let mut s = grid_dimer(mass, 9, 0.5, 4.0, InitialState::Coherent { beta });
        s.model = ElectronicModel::Dimer(MolecularParams { mass, onsite_u: u, ..Default::default() });
        s.space.n_cav = 24;
        s.omega0 = omega0;
        s.g_c = g_c;
        s.omega_scan = linspace(0.5, 3.0, points);
        if bath {
            s.dissipation = Dissipation::Bath(BathParams { exponent, ..Default::default() });
        }
        let cfg = RunConfig { scenario: s, workers, checkpoint_every: 0, out: None };
        prop_assert_eq!(parse_config(&emit_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn peaks_are_local_maxima(row in prop::collection::vec(0.0f64..1.0, 3..60), min in 0.0f64..0.3) {
        let omega = linspace(0.0, 1.0, row.len());
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        for p in detect_peaks(&omega, &row, min) {
            prop_assert!(p.prominence >= min);
            prop_assert!(p.prominence <= p.height - lo + 1e-15);
            prop_assert_eq!(p.height, row[p.index]);
            if p.index > 0 {
                prop_assert!(row[p.index - 1] <= p.height);
            }
            if p.index + 1 < row.len() {
                prop_assert!(row[p.index + 1] <= p.height);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fluorescence_probability_is_a_probability(
        g_c in 0.0f64..0.3,
        g_f in 0.0f64..0.1,
        gamma in 0.0f64..0.1,
        beta in 0.0f64..1.5,
        w in 1.0f64..3.0,
    ) {
        let mut s = tls(18, 2, InitialState::Coherent { beta });
        s.g_c = g_c;
        s.g_f = g_f;
        s.dissipation = Dissipation::Exponential { gamma };
        s.omega_scan = vec![w];
        s.t_end = 3.0;
        let r = sweep_spectrum(&s, SweepOptions::default()).unwrap();
        prop_assert!(r.failures.is_empty());
        prop_assert_eq!(r.probability[0][0], 0.0);
        for x in &r.snapshots[0] {
            prop_assert!((0.0..=1.0).contains(&x.p_fluor));
            prop_assert!(x.norm <= 1.0 + 1e-12);
            prop_assert!(x.n_cav >= 0.0 && x.n_flu >= 0.0);
            let parity = x.parity.unwrap();
            prop_assert!(parity.abs() <= 1.0 + 1e-12);
        }
    }
}
