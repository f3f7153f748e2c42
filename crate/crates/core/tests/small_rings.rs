//! End-to-end checks on short rings, compared with brute-force references.

use std::f64::consts::TAU;

use nhqc_core::dynamics::{self, BunchingOptions, BunchingTime, Propagator, PropagatorOptions};
use nhqc_core::hamiltonian::ExchangeSector;
use nhqc_core::oracle::{self, max_reference_step};
use nhqc_core::spectral::{self, Localization, Vectors};
use nhqc_core::sweep::{self, Axis, Observable, OutputFormat, SweepConfig};
use nhqc_core::topology::{self, WindingMethod, WindingOptions};
use nhqc_core::{linalg, Complex64, Error, ModelConfig, ModelParams, Rational, Sector};

fn ring(p: u64, q: u64, u: f64, h: f64) -> ModelParams {
    ModelParams::new(1.0, u, 0.15, Rational::new(p, q).unwrap(), 0.0, h).unwrap()
}

/// Winding from continuously tracked eigenvalue arguments of the dense
/// reference matrix, with the phase advancing by 2 pi / L over the loop.
fn eigenvalue_phase_winding(params: &ModelParams, energy: Complex64, two: bool, samples: usize) -> f64 {
    let l = params.sites() as f64;
    let total_arg = |theta: f64| -> f64 {
        let p = params.clone().with_phase(params.phase() + theta / l).unwrap();
        let m = if two { oracle::oracle_pair_matrix(&p) } else { oracle::oracle_single_matrix(&p) };
        let eigs = linalg::eigen(m.as_ref(), false).unwrap().0;
        eigs.iter().map(|e| (e - energy).arg()).sum()
    };
    let mut acc = 0.0;
    let mut prev = total_arg(0.0);
    for k in 1..=samples {
        let next = total_arg(TAU * k as f64 / samples as f64);
        acc += linalg::wrap_phase(next - prev);
        prev = next;
    }
    acc / TAU
}

#[test]
fn single_particle_winding_matches_eigenvalue_tracking() {
    for h in [0.5, 3.3] {
        let p = ring(13, 21, 0.0, h);
        let e = Complex64::new(0.0, 0.0);
        let w = topology::winding_number(&p, e, Sector::Single, &WindingOptions::default()).unwrap();
        let reference = eigenvalue_phase_winding(&p, e, false, 400);
        assert_eq!(w.winding as f64, reference.round(), "h = {h}: reference {reference}");
        assert_eq!(w.method, WindingMethod::PhaseUnwrap);
    }
}

#[test]
fn pair_winding_matches_eigenvalue_tracking() {
    for (u, e) in [(0.0, 0.13), (3.0, 0.5), (3.0, 3.0)] {
        let p = ring(5, 8, u, 3.0);
        let e = Complex64::new(e, 0.0);
        let w = topology::winding_number(&p, e, Sector::Two, &WindingOptions::default()).unwrap();
        let reference = eigenvalue_phase_winding(&p, e, true, 600);
        assert!((reference - reference.round()).abs() < 1e-6);
        assert_eq!(w.winding as f64, reference.round(), "U = {u}, E = {e}");
    }
}

#[test]
fn reflection_shortcut_agrees_with_full_loop() {
    let p = ring(8, 13, 2.0, 3.0);
    let e = Complex64::new(0.3, 0.0);
    let with = topology::winding_number(&p, e, Sector::Two, &WindingOptions::default()).unwrap();
    let opts = WindingOptions { use_reflection: false, ..Default::default() };
    let without = topology::winding_number(&p, e, Sector::Two, &opts).unwrap();
    assert_eq!(with.winding, without.winding);
}

#[test]
fn slope_estimate_tracks_winding_when_phase_is_uniform() {
    let p = ring(13, 21, 0.0, 3.3);
    let e = Complex64::new(0.0, 0.0);
    let opts = WindingOptions::default();
    let w = topology::winding_number(&p, e, Sector::Two, &opts).unwrap();
    let s = topology::winding_slope(&p, e, Sector::Two, 0.0, &opts).unwrap();
    assert_eq!(s.method, WindingMethod::SlopeApprox);
    assert!((s.raw_winding - w.winding as f64).abs() < 0.5, "slope {} vs {}", s.raw_winding, w.winding);
}

#[test]
fn winding_rejects_bad_inputs() {
    let p = ring(8, 13, 0.0, 0.5);
    let on = spectral::single_particle_spectrum(&p, false).unwrap().eigenvalues[0];
    let err = topology::winding_number(&p, on, Sector::Single, &WindingOptions::default()).unwrap_err();
    assert!(matches!(err, Error::BaseEnergyOnSpectrum { .. }), "{err}");
    let few = WindingOptions::default().with_samples(32);
    assert!(topology::winding_number(&p, Complex64::new(5.0, 0.0), Sector::Single, &few).is_err());
}

#[test]
fn winding_vanishes_for_real_spectrum_off_axis() {
    let p = ring(13, 21, 2.0, 0.0);
    for e in [Complex64::new(0.0, 0.5), Complex64::new(9.0, 0.0)] {
        let w = topology::winding_number(&p, e, Sector::Two, &WindingOptions::default()).unwrap();
        assert_eq!(w.winding, 0);
    }
}

#[test]
fn transition_scan_brackets_the_threshold() {
    let p = ring(13, 21, 0.0, 0.0);
    let rows = spectral::epsilon_scan(&p, Sector::Single, &[1.0, 2.0, 3.0, 3.5], true).unwrap();
    assert!(rows[0].epsilon < 1e-8);
    assert!(rows[3].epsilon > 1e-3);
    assert!(rows.iter().all(|r| r.ipr_max.is_some()));
    let edge = spectral::spectral_transition(&p, Sector::Single, 1.0, 3.5, 1e-3).unwrap();
    assert!(edge > 1.0 && edge < 3.5);
    let below = p.clone().with_non_hermiticity(edge - 0.01).unwrap();
    let above = p.clone().with_non_hermiticity(edge + 0.01).unwrap();
    assert!(spectral::single_particle_spectrum(&below, false).unwrap().is_real());
    assert!(!spectral::single_particle_spectrum(&above, false).unwrap().is_real());
}

#[test]
fn free_particles_localize_exactly_when_spectrum_turns_complex() {
    for h in [1.0, 3.3] {
        let p = ring(13, 21, 0.0, h);
        let s = spectral::single_particle_spectrum(&p, true).unwrap();
        let classes = spectral::classify_states(&s, &p, spectral::LOCALIZATION_FACTOR).unwrap();
        let localized = classes.iter().all(|c| c.kind == Localization::Localized);
        let extended = classes.iter().all(|c| c.kind == Localization::Extended);
        if s.is_real() {
            assert!(extended, "h = {h}");
        } else {
            assert!(localized, "h = {h}");
        }
    }
}

#[test]
fn exchange_symmetry_is_preserved() {
    let p = ring(13, 21, 4.0, 1.5);
    let s0 = dynamics::prepare_pair_state(&p, 3, 8).unwrap();
    let traj = dynamics::evolve(&p, &s0, &[1.0, 7.5, 30.0], &PropagatorOptions::default()).unwrap();
    for s in &traj.states {
        assert!(s.exchange_asymmetry() < 1e-10);
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn free_pair_evolution_is_a_product_of_single_evolutions() {
    let p = ring(13, 21, 0.0, 1.5);
    let s0 = dynamics::prepare_pair_state(&p, 4, 9).unwrap();
    let t = 4.0;
    let fast = dynamics::evolve(&p, &s0, &[t], &PropagatorOptions::default()).unwrap();
    let slow = oracle::tensor_product_evolution(&p, 4, 9, t, max_reference_step(&p)).unwrap();
    assert!(fast.states[0].max_deviation(&slow) < 1e-6);
}

#[test]
fn hermitian_evolution_keeps_the_norm() {
    let p = ring(13, 21, 2.0, 0.0);
    let s0 = dynamics::prepare_pair_state(&p, 10, 10).unwrap();
    for opts in [PropagatorOptions::default(), PropagatorOptions::direct()] {
        let traj = dynamics::evolve(&p, &s0, &[0.5, 5.0, 20.0], &opts).unwrap();
        assert!(traj.log_norms.iter().all(|ln| ln.abs() < 1e-8), "{:?}", traj.log_norms);
    }
}

#[test]
fn long_time_state_approaches_the_fastest_growing_mode() {
    let p = ring(8, 13, 5.0, 2.0);
    let spectrum = spectral::sector_spectrum(&p, ExchangeSector::Symmetric, Vectors::Full).unwrap();
    let (top, _) = spectrum.eigenvalues.iter().enumerate().max_by(|a, b| a.1.im.total_cmp(&b.1.im)).unwrap();
    let s0 = dynamics::prepare_pair_state(&p, 2, 6).unwrap();
    let late = dynamics::evolve(&p, &s0, &[400.0], &PropagatorOptions::default()).unwrap().states.remove(0);
    // compare |psi|^2 against the dominant symmetric eigenvector
    let vecs = spectrum.eigenvectors.unwrap();
    let full: Vec<Complex64> = vecs.col(top).iter().copied().collect();
    let norm = linalg::norm2(&full);
    let dev = full
        .iter()
        .zip(late.amplitudes())
        .map(|(a, b)| ((a / norm).norm_sqr() - b.norm_sqr()).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6, "deviation {dev}");
}

#[test]
fn bunching_time_is_found_for_a_near_pair() {
    let p = ring(13, 21, 10.0, 1.0);
    let opts = BunchingOptions { t_max: 100.0, ..Default::default() };
    let t = dynamics::bunching_time(&p, 10, 11, &opts, &PropagatorOptions::default()).unwrap();
    let BunchingTime::Reached { tau } = t else { panic!("not reached: {t:?}") };
    let s0 = dynamics::prepare_pair_state(&p, 10, 11).unwrap();
    let prop = Propagator::for_state(&p, &s0, &PropagatorOptions::default()).unwrap();
    let curve = dynamics::bunching_curve(&prop, &s0, &[tau - 0.01, tau + 0.01]).unwrap();
    assert!(curve[0].1 < 0.8 && curve[1].1 >= 0.8, "{curve:?}");
}

#[test]
fn invalid_sites_are_rejected() {
    let p = ring(8, 13, 0.0, 0.0);
    assert!(matches!(dynamics::prepare_pair_state(&p, 13, 0), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn sweep_produces_one_point_per_grid_node() {
    let model = ModelConfig { frequency: Some(Rational::new(8, 13).unwrap()), ..Default::default() };
    let mut cfg = SweepConfig::new(
        model,
        vec![Axis::range("h", 0.0, 3.0, 4), Axis::list("U", vec![0.0, 2.0])],
        vec![
            Observable::Epsilon,
            Observable::Winding { base_energies: vec![sweep::Energy::Complex([0.1, 0.2])], samples: None },
        ],
    );
    cfg.sector = Sector::Single;
    let result = sweep::run_sweep(&cfg).unwrap();
    assert_eq!(result.points.len(), 8);
    let mut csv = Vec::new();
    sweep::write_result(&result, OutputFormat::Csv, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.lines().any(|l| l == "point,h,U,observable,key,re,im,status"));
    let round = SweepConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn sweep_rejects_unknown_axes_and_oversized_grids() {
    let cfg =
        SweepConfig::new(ModelConfig::default(), vec![Axis::range("colour", 0.0, 1.0, 3)], vec![Observable::Epsilon]);
    assert!(sweep::run_sweep(&cfg).is_err());
    let mut cfg =
        SweepConfig::new(ModelConfig::default(), vec![Axis::range("h", 0.0, 1.0, 50)], vec![Observable::Epsilon]);
    cfg.max_jobs = 10;
    assert!(sweep::run_sweep(&cfg).is_err());
}
