//! Property tests for the invariants that span modules.

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use wvlab_core::bohm::{integrate_trajectories, sample_initial_positions, velocity_grid, TrajectoryOptions};
use wvlab_core::harness::config::parse_config;
use wvlab_core::intrinsics::{psd, work_distribution, LagWindow, WorkRecord};
use wvlab_core::measure::{
    fidelity, joint_from_prepared, premeasure, prepare, readout_sample, AncillaModel, ProtocolConfig, SecondMeasurement,
};
use wvlab_core::qgrid::{
    build_hamiltonian, expectation, propagate, propagate_frames, Grid1D, Kinetic, Method, PotentialModel,
    PropagatorConfig, SpectralOperator, Units, WaveFunction,
};
use wvlab_core::weakval::{quadrature_weak_average, WeakValueField};

fn two_packets(grid: Grid1D, a: (f64, f64, f64), b: (f64, f64, f64), w: f64) -> WaveFunction {
    let p = WaveFunction::gaussian(grid, a.0, a.1, a.2).unwrap();
    let q = WaveFunction::gaussian(grid, b.0, b.1, b.2).unwrap();
    let amps = p.amplitudes().iter().zip(q.amplitudes()).map(|(x, y)| x + C64::new(0.0, w) * y).collect();
    let mut psi = WaveFunction::new(grid, amps, 0.0).unwrap();
    psi.normalize().unwrap();
    psi
}

fn packet() -> impl Strategy<Value = (f64, f64, f64)> {
    (-3.0..3.0f64, 0.7..1.5f64, -1.5..1.5f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_step_preserves_the_norm(p in packet(), cn in any::<bool>(), omega in 0.0..1.0f64) {
        let grid = Grid1D::centered(15.0, 128).unwrap();
        let psi = WaveFunction::gaussian(grid, p.0, p.1, p.2).unwrap();
        let method = if cn { Method::CrankNicolson } else { Method::SplitOperator };
        let pot = PotentialModel::Harmonic { omega, center: 0.0 };
        let cfg = PropagatorConfig::new(0.01, method, 1);
        let ev = propagate_frames(&psi, &pot, &Units::default(), &cfg, 0.2).unwrap();
        for w in ev.frames().windows(2) {
            prop_assert!((w[1].norm_sqr() - w[0].norm_sqr()).abs() < 1e-10);
        }
    }

    #[test]
    fn crank_nicolson_is_time_reversible(p in packet(), duration in 0.1..1.0f64) {
        let grid = Grid1D::centered(15.0, 128).unwrap();
        let psi = WaveFunction::gaussian(grid, p.0, p.1, p.2).unwrap();
        let pot = PotentialModel::Barrier { height: 1.0, left: 0.0, right: 1.0 };
        let cfg = PropagatorConfig::new(0.01, Method::CrankNicolson, 10);
        let u = Units::default();
        let back = propagate(&propagate(&psi, &pot, &u, &cfg, duration).unwrap(), &pot, &u, &cfg, -duration).unwrap();
        let err = back.amplitudes().iter().zip(psi.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn hamiltonian_eigenvectors_are_orthonormal(omega in 0.5..2.0f64, stencil in any::<bool>()) {
        let grid = Grid1D::centered(10.0, 64).unwrap();
        let kin = if stencil { Kinetic::Stencil3 } else { Kinetic::Spectral };
        let h = build_hamiltonian(&grid, &PotentialModel::Harmonic { omega, center: 0.0 }, 0.0, &Units::default(), kin).unwrap();
        let dx = grid.dx();
        let f: Vec<Vec<C64>> = (0..8).map(|i| h.eigenfunction(i).unwrap()).collect();
        for i in 0..8 {
            for j in 0..8 {
                let d: C64 = f[i].iter().zip(&f[j]).map(|(a, b)| a.conj() * b).sum::<C64>() * dx;
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - target).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn velocity_is_the_momentum_weak_value(a in packet(), b in packet(), w in -1.0..1.0f64, mass in 0.5..2.0f64) {
        // wide enough that the packets are periodic to roundoff; the two
        // derivatives differ only in the Nyquist mode
        let grid = Grid1D::centered(25.0, 512).unwrap();
        let psi = two_packets(grid, a, b, w);
        let units = Units { mass, ..Units::default() };
        let field = WeakValueField::new(&SpectralOperator::momentum(grid, units), &psi).unwrap();
        let v = velocity_grid(&psi, &units);
        let peak = psi.density().into_iter().fold(0.0, f64::max);
        for j in 0..grid.len() {
            // compare where roundoff in the ratio stays below the tolerance
            if let Some(z) = field.value(j) {
                if psi.density()[j] > 1e-6 * peak {
                    prop_assert!((z.re / mass - v.values()[j]).abs() < 1e-8, "j {j}");
                }
            }
        }
    }

    #[test]
    fn quadrature_of_weak_values_is_the_expectation(a in packet(), which in 0usize..3) {
        let grid = Grid1D::centered(15.0, 256).unwrap();
        let psi = WaveFunction::gaussian(grid, a.0, a.1, a.2).unwrap();
        let u = Units::default();
        let op = match which {
            0 => SpectralOperator::momentum(grid, u),
            1 => build_hamiltonian(&grid, &PotentialModel::Harmonic { omega: 0.7, center: 0.5 }, 0.0, &u, Kinetic::Spectral).unwrap(),
            _ => SpectralOperator::window(grid, -1.3, 0.9),
        };
        let q = quadrature_weak_average(&op, &psi).unwrap();
        let e = expectation(&op, &psi).unwrap();
        prop_assert!((q - e).abs() < 1e-8, "{q} vs {e}");
    }

    #[test]
    fn eigenstates_are_immune_to_weak_measurement(level in 0usize..4, sigma in 0.05..5.0f64, seed in 0u64..1000) {
        use rand::SeedableRng;
        let grid = Grid1D::centered(10.0, 64).unwrap();
        let h = build_hamiltonian(&grid, &PotentialModel::Harmonic { omega: 1.0, center: 0.0 }, 0.0, &Units::default(), Kinetic::Spectral)
            .unwrap()
            .truncated(6);
        let psi = WaveFunction::new(grid, h.eigenfunction(level).unwrap(), 0.0).unwrap();
        let ent = premeasure(&psi, &h, &AncillaModel::new(sigma, 0.5).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let r = readout_sample(&ent, &mut rng);
            prop_assert!((fidelity(&r.collapsed, &ent.coefficients) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_distribution_is_normalized_and_nonnegative(sigma in 0.2..3.0f64, lambda in 0.1..1.0f64, gaussian in any::<bool>()) {
        let grid = Grid1D::centered(10.0, 64).unwrap();
        let u = Units::default();
        let pot = PotentialModel::Harmonic { omega: 1.0, center: 0.0 };
        let psi = WaveFunction::gaussian(grid, 0.7, 0.8, 0.3).unwrap();
        let second = if gaussian { SecondMeasurement::Gaussian { sigma: 0.7 } } else { SecondMeasurement::Projective };
        let cfg = ProtocolConfig {
            s: SpectralOperator::momentum(grid, u),
            g: SpectralOperator::position(grid),
            potential: pot,
            units: u,
            propagator: PropagatorConfig::new(0.01, Method::SplitOperator, 10),
            duration: 0.3,
            ancilla: AncillaModel::new(sigma, lambda).unwrap(),
            second,
            n: 1,
            seed: 0,
        };
        let joint = joint_from_prepared(&prepare(&psi, &cfg).unwrap(), second).unwrap();
        prop_assert!(joint.density.iter().all(|p| *p >= 0.0));
        prop_assert!((joint.total() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn work_histogram_is_a_distribution(works in prop::collection::vec(-5.0..5.0f64, 2..300)) {
        let records: Vec<WorkRecord> = works
            .iter()
            .enumerate()
            .map(|(i, w)| WorkRecord { experiment_id: i, e_initial: 0.0, e_final: *w, work: *w, flagged: false })
            .collect();
        let d = work_distribution(&records).unwrap();
        prop_assert!(d.probabilities.iter().all(|p| *p >= 0.0));
        prop_assert!((d.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_is_even_and_matches_the_correlation_integral(
        traces in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 64), 1..6),
        hann in any::<bool>(),
    ) {
        let window = if hann { LagWindow::Hann } else { LagWindow::None };
        let r = psd(&traces, 0.1, 2.0, window).unwrap();
        let n = r.values.len();
        let m = n / 2;
        let scale = r.values.iter().fold(1e-300f64, |a, v| a.max(v.abs()));
        for j in 1..m {
            prop_assert!((r.values[m + j] - r.values[m - j]).abs() < 1e-8 * scale);
        }
        if !hann {
            prop_assert!((r.value_at_zero() - r.correlation_integral()).abs() < 1e-6);
        }
    }

    #[test]
    fn ancilla_is_normalized_and_centred(sigma in 0.1..10.0f64, lambda in 0.01..2.0f64, s in -3.0..3.0f64) {
        let anc = AncillaModel::new(sigma, lambda).unwrap();
        let grid = anc.outcome_grid(s.abs());
        let norm = grid.integrate(|y| anc.amplitude(y).powi(2));
        let centre = grid.integrate(|y| y * anc.amplitude(y - lambda * s).powi(2));
        prop_assert!((norm - 1.0).abs() < 1e-8);
        prop_assert!((centre - lambda * s).abs() < 1e-8);
    }

    #[test]
    fn trajectories_never_cross(a in packet(), b in packet(), w in -1.0..1.0f64, seed in 0u64..1000) {
        let grid = Grid1D::centered(15.0, 128).unwrap();
        let psi = two_packets(grid, a, b, w);
        let ev = propagate_frames(&psi, &PotentialModel::Free, &Units::default(), &PropagatorConfig::new(0.01, Method::SplitOperator, 5), 1.0).unwrap();
        let ens = integrate_trajectories(&ev, &sample_initial_positions(&psi, 200, seed), TrajectoryOptions { seed, ..Default::default() }).unwrap();
        prop_assert!(ens.is_order_preserving());
    }

    #[test]
    fn same_seed_same_ensemble(seed in any::<u64>(), n in 1usize..200) {
        let grid = Grid1D::centered(10.0, 64).unwrap();
        let psi = WaveFunction::gaussian(grid, 0.0, 1.0, 0.0).unwrap();
        let a = sample_initial_positions(&psi, n, seed);
        let b = sample_initial_positions(&psi, n, seed);
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn configs_round_trip(
        n in 16usize..512,
        width in 0.1..3.0f64,
        dt in 1e-4..0.1f64,
        seed in any::<u64>(),
        sigma in 0.1..50.0f64,
        lambda in 0.01..2.0f64,
        post in -5.0..5.0f64,
    ) {
        let text = format!(r#"{{
            "grid": {{"x_min": -20, "x_max": 20, "n": {n}}},
            "initial_state": {{"kind": "gaussian", "center": 0.5, "width": {width:e}}},
            "propagator": {{"dt": {dt:e}, "method": "crank_nicolson"}},
            "duration": 1.0,
            "ensemble": {{"n": 10, "seed": {seed}}},
            "task": {{"kind": "measure", "s": {{"kind": "hamiltonian", "truncate": 4}}, "g": {{"kind": "position"}},
                      "ancilla": {{"sigma": {sigma:e}, "lambda": {lambda:e}}}, "post_selection": {post:e}}}
        }}"#);
        let cfg = parse_config(&text).unwrap();
        let once = cfg.normalized();
        let again = parse_config(&once).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.normalized(), once);
        prop_assert_eq!(again.hash(), cfg.hash());
    }
}
