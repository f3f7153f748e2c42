//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to the
//! real stdout (not the captured one) and then asserts.
//!
//! Run with `cargo test -p nhqc-core --test acceptance`. The two-particle
//! winding criterion dominates the runtime (several minutes).

use std::io::Write;

use nhqc_core::doublon::{self, AsymptoticsOptions};
use nhqc_core::dynamics::{self, BunchingOptions, BunchingTime, Propagator, PropagatorOptions};
use nhqc_core::hamiltonian::ExchangeSector;
use nhqc_core::oracle;
use nhqc_core::spectral::{self, Localization, Vectors, LOCALIZATION_FACTOR};
use nhqc_core::sweep::{self, Axis, Energy, Observable, OutputFormat, SweepConfig};
use nhqc_core::topology::{self, WindingOptions};
use nhqc_core::{Complex64, ModelConfig, ModelParams, Rational, Sector};

const SITES: (u64, u64) = (34, 55);

fn params(u: f64, h: f64) -> ModelParams {
    nhqc_core::use_sequential_linalg();
    ModelParams::new(1.0, u, 0.15, Rational::new(SITES.0, SITES.1).unwrap(), 0.0, h).unwrap()
}

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {verdict} ({detail})").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_01_single_particle_threshold() {
    let p = params(0.0, 0.0);
    let rows = spectral::epsilon_scan(&p, Sector::Single, &[2.4, 2.8], false).unwrap();
    let edge = spectral::spectral_transition(&p, Sector::Single, 2.0, 3.0, 1e-4).unwrap();
    let expected = (2.0f64 / 0.15).ln();
    let pass = rows[0].epsilon < 1e-8 && rows[1].epsilon > 1e-3 && (edge - expected).abs() <= 0.15;
    report(
        1,
        pass,
        &format!(
            "eps(2.4) = {:.3e}, eps(2.8) = {:.3e}, transition {edge:.4} vs {expected:.4}",
            rows[0].epsilon, rows[1].epsilon
        ),
    );
}

fn pair_windings(u: f64, expected: [i64; 3]) -> (bool, String) {
    let p = params(u, 3.3);
    let energies = [0.0, 1.5, 2.5].map(|e| Complex64::new(e, 0.0));
    let results = topology::winding_numbers(&p, &energies, Sector::Two, &WindingOptions::default()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for ((e, r), want) in energies.iter().zip(results).zip(expected) {
        match r {
            Ok(w) => {
                let stable = w.verified_with.is_some();
                pass &= w.winding == want && stable;
                parts.push(format!(
                    "w({}) = {} want {want}, samples {}/{}",
                    e.re,
                    w.winding,
                    w.theta_samples,
                    w.verified_with.map_or("unverified".into(), |n| n.to_string())
                ));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("w({}) error: {err}", e.re));
            }
        }
    }
    (pass, format!("U = {u}: {}", parts.join("; ")))
}

#[test]
fn criterion_02_pair_winding_numbers() {
    let (free_ok, free) = pair_windings(0.0, [-55, -45, -37]);
    let (int_ok, int) = pair_windings(10.0, [-54, -43, -36]);
    report(2, free_ok && int_ok, &format!("{free} | {int}"));
}

#[test]
fn criterion_03_single_particle_winding() {
    let e = Complex64::new(0.0, 0.0);
    let opts = WindingOptions::default();
    let below = topology::winding_number(&params(0.0, 1.0), e, Sector::Single, &opts).unwrap();
    let above = topology::winding_number(&params(0.0, 3.3), e, Sector::Single, &opts).unwrap();
    report(
        3,
        below.winding == 0 && above.winding == -1,
        &format!("w(h = 1) = {}, w(h = 3.3) = {} at E_B = 0", below.winding, above.winding),
    );
}

#[test]
fn criterion_04_free_pair_factorization() {
    let p = params(0.0, 1.0);
    let two = spectral::two_particle_spectrum(&p, Vectors::None).unwrap().eigenvalues;
    let r = oracle::factorization_check_against(&p, &two).unwrap();
    report(4, r.max_deviation < 1e-8, &format!("max deviation {:.3e}", r.max_deviation));
}

#[test]
fn criterion_05_mobility_edge_coexistence() {
    let probe = params(1.0, 0.0);
    let l = probe.sites() as f64;
    let t = doublon::thresholds(&probe).unwrap();
    let ipr_floor = 5.0 * LOCALIZATION_FACTOR / (l * l);
    let mut pass = true;
    let mut parts = Vec::new();
    let summarize = |h: f64| {
        let p = params(1.0, h);
        let s = spectral::two_particle_spectrum(&p, Vectors::Diagnostics).unwrap();
        let classes = spectral::classify_states(&s, &p, LOCALIZATION_FACTOR).unwrap();
        let localized = classes.iter().filter(|c| c.kind == Localization::Localized).count();
        (localized, classes.len() - localized, s.ipr_min().unwrap(), s.ipr_max().unwrap())
    };
    for h in [2.4, 2.5, 2.55] {
        let (loc, ext, lo, hi) = summarize(h);
        pass &= loc > 0 && ext > 0 && lo < ipr_floor && hi > 0.05;
        parts.push(format!("h = {h}: {loc} localized, {ext} extended, IPR in [{lo:.2e}, {hi:.3}]"));
    }
    let h_low = 0.5 * t.h_c_prime;
    let (loc, _, _, hi) = summarize(h_low);
    pass &= loc == 0;
    parts.push(format!("h = {h_low:.4}: {loc} localized, IPR max {hi:.2e}"));
    report(5, pass, &parts.join("; "));
}

#[test]
fn criterion_06_doublon_threshold() {
    let p = params(10.0, 0.0);
    let predicted = doublon::thresholds(&p).unwrap().h_c_prime;
    let measured = doublon::doublon_transition(&p, 0.0, 1.0, 1e-3).unwrap();
    let strong = doublon::doublon_branch(&params(20.0, 0.1)).unwrap();
    let pass = (measured - predicted).abs() <= 0.3 && strong.epsilon() > 1e-6;
    report(
        6,
        pass,
        &format!(
            "U = 10 transition {measured:.4} vs {predicted:.4}; U = 20, h = 0.1 branch eps {:.3e}",
            strong.epsilon()
        ),
    );
}

#[test]
fn criterion_07_strong_coupling_asymptotics() {
    let p = params(50.0, 1.0);
    let opts = AsymptoticsOptions { initial_site: Some(25), ..Default::default() };
    let r = doublon::validate_asymptotics(&p, &opts).unwrap();
    let pass = r.spectral_mismatch < 0.01 && r.dynamical_mismatch < 0.02;
    report(
        7,
        pass,
        &format!(
            "spectral {:.3e}, dynamical {:.3e} up to t J_e = {}",
            r.spectral_mismatch, r.dynamical_mismatch, opts.horizon
        ),
    );
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn criterion_08_non_hermitian_bunching() {
    let first = 25;
    let opts = BunchingOptions::default();
    let times = opts.sample_times();

    let p = params(10.0, 1.0);
    let prop = Propagator::new(&p, &[ExchangeSector::Symmetric], &PropagatorOptions::default()).unwrap();
    let mut taus = Vec::new();
    let mut stays = true;
    for d in 1..=5 {
        let s0 = dynamics::prepare_pair_state(&p, first, first + d).unwrap();
        match dynamics::bunching_time_with(&prop, &s0, &opts).unwrap() {
            BunchingTime::Reached { tau } => {
                taus.push(tau);
                let late: Vec<f64> = times.iter().copied().filter(|&t| t > tau + opts.resolution).collect();
                let curve = dynamics::bunching_curve(&prop, &s0, &late).unwrap();
                stays &= curve.iter().all(|&(_, pb)| pb > opts.target);
            }
            BunchingTime::NotReached { .. } => taus.push(f64::NAN),
        }
    }

    let hermitian = params(10.0, 0.0);
    let s0 = dynamics::prepare_pair_state(&hermitian, first, first + 1).unwrap();
    let hprop = Propagator::for_state(&hermitian, &s0, &PropagatorOptions::default()).unwrap();
    let hmax = dynamics::bunching_curve(&hprop, &s0, &times).unwrap().iter().map(|&(_, pb)| pb).fold(0.0, f64::max);

    let reached = taus.iter().all(|t| t.is_finite());
    let increasing = taus.windows(2).all(|w| w[1] > w[0]);
    let ds: Vec<f64> = (1..=5).map(f64::from).collect();
    let r2 = if reached { r_squared(&ds, &taus) } else { f64::NAN };
    let pass = reached && stays && hmax < 0.5 && increasing && r2 > 0.9;
    let taus_text: Vec<String> = taus.iter().map(|t| format!("{t:.3}")).collect();
    report(
        8,
        pass,
        &format!(
            "tau0(d = 1..5) = [{}], stays above target {stays}, R^2 {r2:.4}, hermitian max {hmax:.3}",
            taus_text.join(", ")
        ),
    );
}

#[test]
fn criterion_09_evolution_cross_validation() {
    let small = |u: f64, h: f64, gamma: f64| {
        ModelParams::new(1.0, u, 0.15, Rational::new(13, 21).unwrap(), 0.0, h).unwrap().with_loss_rate(gamma).unwrap()
    };
    let times: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();

    let p = small(10.0, 1.0, 0.0);
    let s0 = dynamics::prepare_pair_state(&p, 10, 11).unwrap();
    let spectral = dynamics::evolve(&p, &s0, &times, &PropagatorOptions::default()).unwrap();
    let direct = dynamics::evolve(&p, &s0, &times, &PropagatorOptions::direct()).unwrap();
    let method_dev = spectral.states.iter().zip(&direct.states).map(|(a, b)| a.max_deviation(b)).fold(0.0, f64::max);

    let lossy = dynamics::evolve(&small(10.0, 1.0, 0.4), &s0, &times, &PropagatorOptions::default()).unwrap();
    let gamma_dev = spectral.states.iter().zip(&lossy.states).map(|(a, b)| a.max_deviation(b)).fold(0.0, f64::max);

    let herm = small(10.0, 0.0, 0.0);
    let norm_dev = [PropagatorOptions::default(), PropagatorOptions::direct()]
        .iter()
        .map(|o| {
            let t = dynamics::evolve(&herm, &s0, &times, o).unwrap();
            t.log_norms.iter().map(|ln| ln.exp_m1().abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    let pass = method_dev < 1e-6 && gamma_dev < 1e-10 && norm_dev < 1e-8;
    report(
        9,
        pass,
        &format!(
            "spectral vs direct {method_dev:.2e}, loss invariance {gamma_dev:.2e}, hermitian norm drift {norm_dev:.2e}"
        ),
    );
}

fn sweep_config(workers: usize) -> SweepConfig {
    let model =
        ModelConfig { frequency: Some(Rational::new(13, 21).unwrap()), interaction: Some(2.0), ..Default::default() };
    let mut cfg = SweepConfig::new(
        model,
        vec![Axis::range("h", 0.5, 3.5, 4), Axis::list("U", vec![0.0, 5.0])],
        vec![
            Observable::Epsilon,
            Observable::IprExtrema,
            Observable::Winding { base_energies: vec![Energy::Real(0.3), Energy::Complex([1.0, 0.5])], samples: None },
            Observable::Bunching { n1: 10, n2: 12, times: vec![0.0, 2.5, 10.0] },
        ],
    );
    cfg.workers = Some(workers);
    cfg
}

fn sweep_csv(cfg: &SweepConfig) -> Vec<u8> {
    let mut out = Vec::new();
    sweep::write_result(&sweep::run_sweep(cfg).unwrap(), OutputFormat::Csv, &mut out).unwrap();
    out
}

#[test]
fn criterion_10_sweep_determinism() {
    let a = sweep_csv(&sweep_config(1));
    let b = sweep_csv(&sweep_config(1));
    let c = sweep_csv(&sweep_config(3));
    let rows = a.split(|&b| b == b'\n').filter(|l| !l.is_empty() && l[0] != b'#').count();
    let pass = a == b && a == c && rows > 1;
    report(10, pass, &format!("repeat identical {}, 1 vs 3 workers identical {}, {rows} rows", a == b, a == c));
}
