//! Deliberately naive reference computations. The matrices here are assembled
//! from scratch (own potential formula, own index arithmetic, sparse triplet
//! lists) so that they share no assembly code with the main modules.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PropagatorOptions, TwoParticleState};
use crate::error::{Error, Result};
use crate::hamiltonian;
use crate::linalg::{self, CMatrix};
use crate::model::{ModelParams, Rational};
use crate::spectral::{self, Vectors};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub check: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(check: impl Into<String>, max_deviation: f64, tolerance: f64) -> Self {
        Self { check: check.into(), max_deviation, tolerance, pass: max_deviation <= tolerance }
    }
}

/// On-site energies straight from `V cos(2 pi alpha l + theta + i h) - i gamma`.
fn onsite(params: &ModelParams) -> Vec<Complex64> {
    let alpha = params.frequency().numer() as f64 / params.frequency().denom() as f64;
    (0..params.sites())
        .map(|l| {
            let arg = Complex64::new(2.0 * PI * alpha * l as f64 + params.phase(), params.non_hermiticity());
            arg.cos() * params.amplitude() - Complex64::new(0.0, params.loss_rate())
        })
        .collect()
}

type Triplets = Vec<(usize, usize, Complex64)>;

fn single_triplets(params: &ModelParams) -> Triplets {
    let l = params.sites();
    let j = Complex64::new(-params.hopping(), 0.0);
    let mut t = Vec::new();
    for (i, v) in onsite(params).into_iter().enumerate() {
        t.push((i, i, v));
        t.push((i, (i + 1) % l, j));
        t.push((i, (i + l - 1) % l, j));
    }
    t
}

fn pair_triplets(params: &ModelParams) -> Triplets {
    let l = params.sites();
    let v = onsite(params);
    let j = Complex64::new(-params.hopping(), 0.0);
    let idx = |n: usize, m: usize| n * l + m;
    let mut t = Vec::new();
    for n in 0..l {
        for m in 0..l {
            let mut d = v[n] + v[m];
            if n == m {
                d += params.interaction();
            }
            t.push((idx(n, m), idx(n, m), d));
            for (a, b) in [((n + 1) % l, m), ((n + l - 1) % l, m), (n, (m + 1) % l), (n, (m + l - 1) % l)] {
                t.push((idx(n, m), idx(a, b), j));
            }
        }
    }
    t
}

fn densify(dim: usize, triplets: &Triplets) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for &(i, j, v) in triplets {
        m[(i, j)] += v;
    }
    m
}

fn sparse_apply(triplets: &Triplets, x: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for &(i, j, v) in triplets {
        y[i] += v * x[j];
    }
    y
}

pub fn oracle_single_matrix(params: &ModelParams) -> CMatrix {
    densify(params.sites(), &single_triplets(params))
}

pub fn oracle_pair_matrix(params: &ModelParams) -> CMatrix {
    densify(params.pair_dim(), &pair_triplets(params))
}

/// All `E_b + E_d` over ordered pairs of single-particle eigenvalues.
pub fn pairwise_sums(single: &[Complex64]) -> Vec<Complex64> {
    single.iter().flat_map(|a| single.iter().map(move |b| a + b)).collect()
}

/// Multiset distance between two eigenvalue lists: both are sorted by real
/// then imaginary part and each entry of `a` is matched to the nearest unused
/// entry of `b` within a small window of the sorted order.
pub fn multiset_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let key = |x: &Complex64, y: &Complex64| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(key);
    b.sort_by(key);
    const WINDOW: usize = 32;
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for (i, x) in a.iter().enumerate() {
        let lo = i.saturating_sub(WINDOW);
        let hi = (i + WINDOW + 1).min(b.len());
        let best = (lo..hi).filter(|&j| !used[j]).min_by(|&p, &q| (b[p] - x).norm().total_cmp(&(b[q] - x).norm()));
        match best {
            Some(j) => {
                used[j] = true;
                worst = worst.max((b[j] - x).norm());
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

fn require_free(params: &ModelParams) -> Result<()> {
    if params.interaction() != 0.0 {
        return Err(Error::Precondition(format!(
            "factorization holds only without interaction (U = {})",
            params.interaction()
        )));
    }
    Ok(())
}

/// Two-particle eigenvalues of the independently assembled dense `H2` against
/// all pairwise sums of single-particle eigenvalues.
pub fn factorization_check(params: &ModelParams) -> Result<OracleReport> {
    require_free(params)?;
    let two = linalg::eigen(oracle_pair_matrix(params).as_ref(), false)?.0;
    factorization_check_against(params, &two)
}

/// As [`factorization_check`], for a two-particle spectrum computed elsewhere.
pub fn factorization_check_against(params: &ModelParams, two_particle: &[Complex64]) -> Result<OracleReport> {
    require_free(params)?;
    let single = linalg::eigen(oracle_single_matrix(params).as_ref(), false)?.0;
    let dev = multiset_deviation(two_particle, &pairwise_sums(&single));
    Ok(OracleReport::new(format!("factorization L={}", params.sites()), dev, 1e-8))
}

/// Largest step the reference integrator accepts: `0.01 / max(J, |U|, V e^h)`.
pub fn max_reference_step(params: &ModelParams) -> f64 {
    let scale =
        params.hopping().abs().max(params.interaction().abs()).max(params.amplitude() * params.non_hermiticity().exp());
    0.01 / scale
}

fn rk4(triplets: &Triplets, psi0: &[Complex64], t: f64, dt: f64) -> Vec<Complex64> {
    let mut y = psi0.to_vec();
    if t == 0.0 {
        return y;
    }
    let steps = (t / dt).ceil() as usize;
    let h = t / steps as f64;
    let minus_i = Complex64::new(0.0, -1.0);
    let f =
        |x: &[Complex64]| -> Vec<Complex64> { sparse_apply(triplets, x).into_iter().map(|v| v * minus_i).collect() };
    let axpy = |y: &[Complex64], k: &[Complex64], s: f64| -> Vec<Complex64> {
        y.iter().zip(k).map(|(a, b)| a + b * s).collect()
    };
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&axpy(&y, &k1, h / 2.0));
        let k3 = f(&axpy(&y, &k2, h / 2.0));
        let k4 = f(&axpy(&y, &k3, h));
        for i in 0..y.len() {
            y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
        }
        // rescale to dodge overflow; the final state is normalized anyway
        let n = linalg::norm2(&y);
        y.iter_mut().for_each(|a| *a /= n);
    }
    y
}

fn check_step(params: &ModelParams, dt: f64) -> Result<()> {
    let bound = max_reference_step(params);
    if !(dt > 0.0) || dt > bound {
        return Err(Error::StepTooLarge { dt, bound });
    }
    Ok(())
}

/// Fixed-step RK4 of `i dpsi/dt = H psi` with an independently assembled `H2`,
/// normalized at the end.
pub fn naive_evolution(params: &ModelParams, state0: &TwoParticleState, t: f64, dt: f64) -> Result<TwoParticleState> {
    check_step(params, dt)?;
    if state0.sites() != params.sites() {
        return Err(Error::DimensionMismatch { expected: params.sites(), actual: state0.sites() });
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter("t must be non-negative".into()));
    }
    if t == 0.0 {
        return Ok(state0.clone());
    }
    let y = rk4(&pair_triplets(params), state0.amplitudes(), t, dt);
    TwoParticleState::new(params.sites(), y, state0.time() + t)
}

/// Non-interacting pair evolution built from two single-particle evolutions:
/// `(a (x) b + b (x) a) / sqrt 2` with `a, b` started on `n1`, `n2`.
pub fn tensor_product_evolution(
    params: &ModelParams,
    n1: usize,
    n2: usize,
    t: f64,
    dt: f64,
) -> Result<TwoParticleState> {
    check_step(params, dt)?;
    let l = params.sites();
    if n1 >= l || n2 >= l {
        return Err(Error::IndexOutOfRange { n: n1, m: n2, sites: l });
    }
    let triplets = single_triplets(params);
    let delta = |n: usize| {
        let mut v = vec![Complex64::new(0.0, 0.0); l];
        v[n] = Complex64::new(1.0, 0.0);
        v
    };
    // rk4 normalizes both factors by their own norms; the product differs
    // from the true one only by a positive scalar
    let a = rk4(&triplets, &delta(n1), t, dt);
    let b = rk4(&triplets, &delta(n2), t, dt);
    let mut psi = vec![Complex64::new(0.0, 0.0); l * l];
    for n in 0..l {
        for m in 0..l {
            psi[n * l + m] = if n1 == n2 { a[n] * a[m] } else { a[n] * b[m] + b[n] * a[m] };
        }
    }
    TwoParticleState::new(l, psi, t)
}

fn fib_params(num: u64, den: u64, u: f64, h: f64) -> Result<ModelParams> {
    ModelParams::new(1.0, u, 0.15, Rational::new(num, den)?, 0.0, h)
}

/// The suite run by `nhqc verify`: small Fibonacci lattices, each check
/// comparing a main-module result with its naive counterpart.
pub fn cross_checks() -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();

    for (num, den) in [(8, 13), (13, 21)] {
        out.push(factorization_check(&fib_params(num, den, 0.0, 1.0)?)?);
    }
    let two_site = ModelParams::new(1.0, 0.0, 0.0, Rational::new(1, 2)?, 0.0, 0.0)?;
    let two = linalg::eigen(oracle_pair_matrix(&two_site).as_ref(), false)?.0;
    let expected = [-4.0, 0.0, 0.0, 4.0].map(|x| Complex64::new(x, 0.0));
    out.push(OracleReport::new("two-site free spectrum", multiset_deviation(&two, &expected), 1e-12));

    let p = fib_params(13, 21, 3.0, 1.4)?.with_loss_rate(0.2)?;
    let dense = hamiltonian::build_h2(&p)?.matrix;
    let reference = oracle_pair_matrix(&p);
    let assembly = (0..dense.nrows())
        .flat_map(|i| (0..dense.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (dense[(i, j)] - reference[(i, j)]).norm())
        .fold(0.0, f64::max);
    out.push(OracleReport::new("pair Hamiltonian assembly L=21", assembly, 1e-12));

    let x: Vec<Complex64> =
        (0..p.pair_dim()).map(|k| Complex64::new((k as f64).sin(), (0.3 * k as f64).cos())).collect();
    let fast = hamiltonian::apply_h2(&p, &x)?;
    let slow = sparse_apply(&pair_triplets(&p), &x);
    let matvec = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.push(OracleReport::new("matrix-free apply L=21", matvec, 1e-12));

    let p = fib_params(8, 13, 2.0, 0.8)?;
    let spec = spectral::two_particle_spectrum(&p, Vectors::Full)?;
    let h = oracle_pair_matrix(&p);
    let hnorm = linalg::one_norm(h.as_ref());
    let vecs = spec.eigenvectors.as_ref().ok_or(Error::MissingEigenvectors)?;
    let residual = spec
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let v: Vec<Complex64> = vecs.col(k).iter().copied().collect();
            let hv = linalg::matvec(h.as_ref(), &v);
            linalg::norm2(&hv.iter().zip(&v).map(|(a, b)| a - e * b).collect::<Vec<_>>()) / hnorm
        })
        .fold(0.0, f64::max);
    out.push(OracleReport::new("eigenpair residual L=13", residual, 1e-8));

    let energy = Complex64::new(0.37, 0.11);
    let ld = crate::topology::shifted_log_det(&h, energy);
    let eigs = linalg::eigen(h.as_ref(), false)?.0;
    let log_abs: f64 = eigs.iter().map(|e| (e - energy).norm().ln()).sum();
    let phase: f64 = eigs.iter().map(|e| (e - energy).arg()).sum();
    let dphase = linalg::wrap_phase(phase - ld.phase).abs();
    let logdet = ((log_abs - ld.log_abs).abs() / log_abs.abs().max(1.0)).max(dphase / TAU);
    out.push(OracleReport::new("log-determinant L=13", logdet, 1e-8));

    let p = fib_params(13, 21, 2.0, 1.0)?;
    let s0 = dynamics::prepare_pair_state(&p, 9, 11)?;
    let t = 5.0;
    let fast = dynamics::evolve(&p, &s0, &[t], &PropagatorOptions::default())?;
    let slow = naive_evolution(&p, &s0, t, max_reference_step(&p))?;
    out.push(OracleReport::new("spectral evolution L=21", fast.states[0].max_deviation(&slow), 1e-6));

    let p = fib_params(13, 21, 0.0, 1.0)?;
    let s0 = dynamics::prepare_pair_state(&p, 4, 7)?;
    let fast = dynamics::evolve(&p, &s0, &[t], &PropagatorOptions::default())?;
    let tensor = tensor_product_evolution(&p, 4, 7, t, max_reference_step(&p))?;
    out.push(OracleReport::new("free evolution factorizes L=21", fast.states[0].max_deviation(&tensor), 1e-6));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interaction_rejected() {
        let p = fib_params(8, 13, 0.5, 0.0).unwrap();
        assert!(matches!(factorization_check(&p), Err(Error::Precondition(_))));
    }

    #[test]
    fn step_bound_enforced() {
        let p = fib_params(8, 13, 10.0, 1.0).unwrap();
        let s = dynamics::prepare_pair_state(&p, 0, 1).unwrap();
        assert!((max_reference_step(&p) - 0.001).abs() < 1e-15);
        assert!(matches!(naive_evolution(&p, &s, 1.0, 0.01), Err(Error::StepTooLarge { .. })));
        assert_eq!(naive_evolution(&p, &s, 0.0, 0.001).unwrap(), s);
    }

    #[test]
    fn hermitian_reference_conserves_norm() {
        // the raw RK4 map is checked here, before any renormalization
        let p = fib_params(5, 8, 1.0, 0.0).unwrap();
        let t = pair_triplets(&p);
        let dt = max_reference_step(&p);
        let steps = (10.0 / dt) as usize;
        let mut y = dynamics::prepare_pair_state(&p, 0, 3).unwrap().amplitudes().to_vec();
        let minus_i = Complex64::new(0.0, -1.0);
        let f = |x: &[Complex64]| -> Vec<Complex64> { sparse_apply(&t, x).into_iter().map(|v| v * minus_i).collect() };
        for _ in 0..steps {
            let k1 = f(&y);
            let y2: Vec<_> = y.iter().zip(&k1).map(|(a, b)| a + b * (dt / 2.0)).collect();
            let k2 = f(&y2);
            let y3: Vec<_> = y.iter().zip(&k2).map(|(a, b)| a + b * (dt / 2.0)).collect();
            let k3 = f(&y3);
            let y4: Vec<_> = y.iter().zip(&k3).map(|(a, b)| a + b * dt).collect();
            let k4 = f(&y4);
            for i in 0..y.len() {
                y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        assert!((linalg::norm2(&y) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multiset_examples() {
        let a = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let b = [Complex64::new(0.0, 1.0), Complex64::new(1.0, 1e-9)];
        assert!((multiset_deviation(&a, &b) - 1e-9).abs() < 1e-15);
        assert!(multiset_deviation(&a, &b[..1]).is_infinite());
    }

    #[test]
    fn all_cross_checks_pass() {
        for r in cross_checks().unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }
}
