//! Post-selected (null-jump) evolution `psi(t) = exp(-iHt) psi(0) / ||exp(-iHt) psi(0)||`
//! of two-particle states, plus the bunching observables built on it.

use std::io::Write;

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{ExchangeSector, PairOperator, SectorBasis};
use crate::linalg::{self, CMatrix};
use crate::model::ModelParams;
use crate::spectral::CONDITION_LIMIT;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Normalized amplitudes `psi_{n,m}` on the `L x L` grid, row-major in `(n, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoParticleState {
    sites: usize,
    amplitudes: Vec<Complex64>,
    time: f64,
}

impl TwoParticleState {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn new(sites: usize, amplitudes: Vec<Complex64>, time: f64) -> Result<Self> {
        if amplitudes.len() != sites * sites {
            return Err(Error::DimensionMismatch { expected: sites * sites, actual: amplitudes.len() });
        }
        let norm = linalg::norm2(&amplitudes);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let amplitudes = amplitudes.into_iter().map(|a| a / norm).collect();
        Ok(Self { sites, amplitudes, time })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, n: usize, m: usize) -> Complex64 {
        self.amplitudes[n * self.sites + m]
    }

    pub fn probability(&self, n: usize, m: usize) -> f64 {
        self.amplitude(n, m).norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm2(&self.amplitudes)
    }

    /// `P_n = |psi_{n,n}|^2` for every site.
    pub fn diagonal_probabilities(&self) -> Vec<f64> {
        (0..self.sites).map(|n| self.probability(n, n)).collect()
    }

    /// Largest `|psi_{n,m} - psi_{m,n}|`.
    pub fn exchange_asymmetry(&self) -> f64 {
        let l = self.sites;
        let mut worst = 0.0f64;
        for n in 0..l {
            for m in n + 1..l {
                worst = worst.max((self.amplitude(n, m) - self.amplitude(m, n)).norm());
            }
        }
        worst
    }

    /// Largest amplitude difference to `other`.
    pub fn max_deviation(&self, other: &TwoParticleState) -> f64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

/// Two particles at `n1` and `n2` (0-based), symmetrized; a single doublon when `n1 == n2`.
pub fn prepare_pair_state(params: &ModelParams, n1: usize, n2: usize) -> Result<TwoParticleState> {
    let l = params.sites();
    for n in [n1, n2] {
        if n >= l {
            return Err(Error::IndexOutOfRange { n: n1, m: n2, sites: l });
        }
    }
    let mut amplitudes = vec![ZERO; l * l];
    if n1 == n2 {
        amplitudes[n1 * l + n1] = Complex64::new(1.0, 0.0);
    } else {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amplitudes[n1 * l + n2] = a;
        amplitudes[n2 * l + n1] = a;
    }
    TwoParticleState::new(l, amplitudes, 0.0)
}

/// `P_bun = sum_n |psi_{n,n}|^2`.
pub fn bunching_probability(state: &TwoParticleState) -> f64 {
    let total: f64 = state.amplitudes.iter().map(|a| a.norm_sqr()).sum();
    state.diagonal_probabilities().iter().sum::<f64>() / total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorMethod {
    Spectral,
    DirectIntegrator,
}

/// How expansion coefficients of the initial state are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientRule {
    /// Solve `V c = psi(0)` with the right-eigenvector matrix.
    LinearSolve,
    /// Left-eigenvector projection. The blocks are complex symmetric, so the
    /// left eigenvectors are the transposed right ones: `c = v^T psi / v^T v`.
    AdjointProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorOptions {
    pub method: PropagatorMethod,
    pub coefficients: CoefficientRule,
    /// Spectral blocks above this eigenvector condition estimate fall back to integration.
    pub condition_limit: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self {
            method: PropagatorMethod::Spectral,
            coefficients: CoefficientRule::LinearSolve,
            condition_limit: CONDITION_LIMIT,
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

impl PropagatorOptions {
    pub fn direct() -> Self {
        Self { method: PropagatorMethod::DirectIntegrator, ..Self::default() }
    }
}

/// Eigendecomposition of one invariant block, with coordinates relative to
/// `basis` (or the full space when `basis` is `None`).
struct SpectralBlock {
    basis: Option<SectorBasis>,
    eigenvalues: Vec<Complex64>,
    vectors: CMatrix,
    lu: PartialPivLu<Complex64>,
    condition: f64,
    symmetric: bool,
}

impl SpectralBlock {
    fn new(matrix: &CMatrix, basis: Option<SectorBasis>) -> Result<Self> {
        let (eigenvalues, vectors) = linalg::eigen(matrix.as_ref(), true)?;
        let vectors = vectors.ok_or(Error::MissingEigenvectors)?;
        let lu = vectors.partial_piv_lu();
        let condition = linalg::one_norm(vectors.as_ref()) * linalg::inverse_one_norm_estimate(&lu);
        let n = matrix.nrows();
        let symmetric = (0..n).all(|j| (0..j).all(|i| matrix[(i, j)] == matrix[(j, i)]));
        Ok(Self { basis, eigenvalues, vectors, lu, condition, symmetric })
    }

    fn coordinates(&self, full: &[Complex64]) -> Vec<Complex64> {
        match &self.basis {
            Some(b) => b.project(full),
            None => full.to_vec(),
        }
    }

    fn coefficients(&self, coords: &[Complex64], rule: CoefficientRule) -> Result<Vec<Complex64>> {
        let n = coords.len();
        match rule {
            CoefficientRule::LinearSolve => {
                let rhs = Mat::from_fn(n, 1, |i, _| coords[i]);
                let c = self.lu.solve(&rhs);
                Ok((0..n).map(|i| c[(i, 0)]).collect())
            }
            CoefficientRule::AdjointProjection => {
                if !self.symmetric {
                    return Err(Error::Precondition("adjoint projection needs a complex-symmetric block".into()));
                }
                Ok((0..n)
                    .map(|k| {
                        let v = self.vectors.col(k);
                        let num: Complex64 = v.iter().zip(coords).map(|(a, b)| a * b).sum();
                        let den: Complex64 = v.iter().map(|a| a * a).sum();
                        num / den
                    })
                    .collect())
            }
        }
    }

    /// Largest `Im E` carried by a nonzero coefficient.
    fn growth(&self, coeffs: &[Complex64]) -> f64 {
        self.eigenvalues
            .iter()
            .zip(coeffs)
            .filter(|(_, c)| **c != ZERO)
            .map(|(e, _)| e.im)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum_k c_k v_k exp(-i E_k t - g t)` added into `full`.
    fn accumulate(&self, coeffs: &[Complex64], t: f64, g: f64, full: &mut [Complex64]) {
        let weights: Vec<Complex64> =
            self.eigenvalues.iter().zip(coeffs).map(|(e, c)| c * (Complex64::new(0.0, -t) * e - g * t).exp()).collect();
        let coords = linalg::matvec(self.vectors.as_ref(), &weights);
        match &self.basis {
            Some(b) => b.embed_into(&coords, full),
            None => full.iter_mut().zip(coords).for_each(|(f, c)| *f += c),
        }
    }
}

struct SpectralEngine {
    blocks: Vec<SpectralBlock>,
    rule: CoefficientRule,
}

impl SpectralEngine {
    fn condition(&self) -> f64 {
        self.blocks.iter().map(|b| b.condition).fold(0.0, f64::max)
    }

    fn evolve(&self, psi0: &[Complex64], times: &[f64]) -> Result<Vec<(Vec<Complex64>, f64)>> {
        let mut active = Vec::new();
        let mut captured = 0.0;
        for block in &self.blocks {
            let coords = block.coordinates(psi0);
            let weight: f64 = coords.iter().map(|c| c.norm_sqr()).sum();
            captured += weight;
            if weight > 0.0 {
                active.push((block, block.coefficients(&coords, self.rule)?));
            }
        }
        let total: f64 = psi0.iter().map(|c| c.norm_sqr()).sum();
        if (captured - total).abs() > 1e-12 * total.max(1.0) {
            return Err(Error::Precondition("initial state has weight outside the propagator's sectors".into()));
        }
        let g = active.iter().map(|(b, c)| b.growth(c)).fold(f64::NEG_INFINITY, f64::max);
        let g = if g.is_finite() { g } else { 0.0 };
        Ok(times
            .iter()
            .map(|&t| {
                if t == 0.0 {
                    return (psi0.to_vec(), total.sqrt().ln());
                }
                let mut full = vec![ZERO; psi0.len()];
                for (block, coeffs) in &active {
                    block.accumulate(coeffs, t, g, &mut full);
                }
                let norm = linalg::norm2(&full);
                (full, g * t + norm.ln())
            })
            .collect())
    }
}

/// Matrix-free or dense linear operator for the direct integrator.
#[derive(Clone, Debug)]
enum Operator {
    Pair(PairOperator),
    Dense(CMatrix),
}

impl Operator {
    fn dim(&self) -> usize {
        match self {
            Operator::Pair(op) => op.dim(),
            Operator::Dense(m) => m.nrows(),
        }
    }

    /// `out = -i H x`.
    fn rhs(&self, x: &[Complex64], out: &mut [Complex64]) {
        match self {
            Operator::Pair(op) => op.apply_into(x, out).expect("dimension checked by caller"),
            Operator::Dense(m) => out.copy_from_slice(&linalg::matvec(m.as_ref(), x)),
        }
        for o in out.iter_mut() {
            *o = Complex64::new(o.im, -o.re);
        }
    }
}

/// Adaptive Dormand-Prince 5(4) for `dpsi/dt = -i H psi`, renormalizing
/// after every accepted step and accumulating the log-norm.
struct DirectEngine {
    op: Operator,
    rtol: f64,
    atol: f64,
    max_steps: usize,
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

impl DirectEngine {
    fn evolve(&self, psi0: &[Complex64], times: &[f64]) -> Result<Vec<(Vec<Complex64>, f64)>> {
        let n = self.op.dim();
        let norm0 = linalg::norm2(psi0);
        let mut y: Vec<Complex64> = psi0.iter().map(|a| a / norm0).collect();
        let mut log_norm = norm0.ln();
        let mut t = 0.0;
        let mut k: Vec<Vec<Complex64>> = vec![vec![ZERO; n]; 7];
        let mut stage = vec![ZERO; n];
        let mut y_new = vec![ZERO; n];
        self.op.rhs(&y, &mut k[0]);
        let mut h = {
            let f = linalg::norm2(&k[0]);
            if f > 0.0 {
                0.01 / f
            } else {
                0.1
            }
        };
        let mut steps = 0usize;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            if target == 0.0 {
                out.push((psi0.to_vec(), norm0.ln()));
                continue;
            }
            while t < target {
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::Integrator(format!("step budget exhausted at t = {t}")));
                }
                let last = t + h >= target;
                let step = if last { target - t } else { h };
                for s in 1..7 {
                    for i in 0..n {
                        let mut acc = y[i];
                        for (j, kj) in k.iter().enumerate().take(s) {
                            if A[s][j] != 0.0 {
                                acc += kj[i] * (step * A[s][j]);
                            }
                        }
                        stage[i] = acc;
                    }
                    self.op.rhs(&stage, &mut k[s]);
                    if s == 6 {
                        y_new.copy_from_slice(&stage);
                    }
                }
                // the last stage is evaluated at the 5th-order solution, so k[6] = f(y_new)
                let mut err = 0.0;
                for i in 0..n {
                    let mut e = ZERO;
                    for (j, kj) in k.iter().enumerate() {
                        if E[j] != 0.0 {
                            e += kj[i] * E[j];
                        }
                    }
                    let sc = self.atol + self.rtol * y[i].norm().max(y_new[i].norm());
                    err += (e.norm() * step / sc).powi(2);
                }
                let err = (err / n as f64).sqrt();
                if !err.is_finite() {
                    return Err(Error::Integrator(format!("non-finite error estimate at t = {t}")));
                }
                if err <= 1.0 {
                    t = if last { target } else { t + step };
                    let norm = linalg::norm2(&y_new);
                    log_norm += norm.ln();
                    for i in 0..n {
                        y[i] = y_new[i] / norm;
                    }
                    let (first, rest) = k.split_at_mut(1);
                    for (a, b) in first[0].iter_mut().zip(&rest[5]) {
                        *a = b / norm;
                    }
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !(last && err <= 1.0) {
                    h = step * factor;
                }
                if h < 1e-14 * target.max(1.0) {
                    return Err(Error::Integrator(format!("step size underflow at t = {t}")));
                }
            }
            out.push((y.clone(), log_norm));
        }
        Ok(out)
    }
}

enum Engine {
    Spectral(SpectralEngine),
    Direct(DirectEngine),
}

/// Immutable evolution engine for one Hamiltonian; shareable across threads.
pub struct Propagator {
    sites: usize,
    engine: Engine,
    fallback: Option<String>,
}

/// Output of an evolution: normalized states at the requested times plus
/// `ln ||exp(-iHt) psi(0)||` for each.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<TwoParticleState>,
    pub log_norms: Vec<f64>,
    pub method: PropagatorMethod,
    /// Set when the spectral method was requested but integration was used.
    pub fallback: Option<String>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time()).collect()
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::InvalidParameter("times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be ascending".into()));
    }
    Ok(())
}

impl Propagator {
    /// Propagator for states supported on the given exchange sectors.
    pub fn new(params: &ModelParams, sectors: &[ExchangeSector], opts: &PropagatorOptions) -> Result<Self> {
        let sites = params.sites();
        let direct = || DirectEngine {
            op: Operator::Pair(PairOperator::new(params)),
            rtol: opts.rtol,
            atol: opts.atol,
            max_steps: opts.max_steps,
        };
        if opts.method == PropagatorMethod::DirectIntegrator {
            return Ok(Self { sites, engine: Engine::Direct(direct()), fallback: None });
        }
        let op = PairOperator::new(params);
        let blocks: Result<Vec<SpectralBlock>> = sectors
            .iter()
            .map(|&s| SectorBasis::new(sites, s))
            .filter(|b| !b.is_empty())
            .map(|b| SpectralBlock::new(&op.sector_matrix(&b), Some(b)))
            .collect();
        let reason = match blocks {
            Ok(blocks) => {
                let engine = SpectralEngine { blocks, rule: opts.coefficients };
                let condition = engine.condition();
                if condition <= opts.condition_limit {
                    return Ok(Self { sites, engine: Engine::Spectral(engine), fallback: None });
                }
                Error::IllConditioned { condition, limit: opts.condition_limit }.to_string()
            }
            Err(e) if e.is_numerical() => e.to_string(),
            Err(e) => return Err(e),
        };
        Ok(Self { sites, engine: Engine::Direct(direct()), fallback: Some(reason) })
    }

    /// Propagator covering only the sectors `state` occupies.
    pub fn for_state(params: &ModelParams, state: &TwoParticleState, opts: &PropagatorOptions) -> Result<Self> {
        let sectors: Vec<ExchangeSector> = ExchangeSector::BOTH
            .into_iter()
            .filter(|&s| {
                let basis = SectorBasis::new(params.sites(), s);
                basis.project(state.amplitudes()).iter().any(|c| *c != ZERO)
            })
            .collect();
        Self::new(params, &sectors, opts)
    }

    pub fn method(&self) -> PropagatorMethod {
        match self.engine {
            Engine::Spectral(_) => PropagatorMethod::Spectral,
            Engine::Direct(_) => PropagatorMethod::DirectIntegrator,
        }
    }

    pub fn fallback_reason(&self) -> Option<&str> {
        self.fallback.as_deref()
    }

    /// Eigenvector condition estimate of the spectral engine.
    pub fn condition(&self) -> Option<f64> {
        match &self.engine {
            Engine::Spectral(s) => Some(s.condition()),
            Engine::Direct(_) => None,
        }
    }

    /// Evolves `state0` to `state0.time() + tau` for every `tau` in `offsets`.
    pub fn evolve(&self, state0: &TwoParticleState, offsets: &[f64]) -> Result<Trajectory> {
        if state0.sites() != self.sites {
            return Err(Error::DimensionMismatch { expected: self.sites, actual: state0.sites() });
        }
        check_times(offsets)?;
        let raw = match &self.engine {
            Engine::Spectral(s) => s.evolve(state0.amplitudes(), offsets)?,
            Engine::Direct(d) => d.evolve(state0.amplitudes(), offsets)?,
        };
        let mut states = Vec::with_capacity(raw.len());
        let mut log_norms = Vec::with_capacity(raw.len());
        for ((amps, log_norm), &tau) in raw.into_iter().zip(offsets) {
            let time = state0.time() + tau;
            let state = if tau == 0.0 {
                TwoParticleState { time, ..state0.clone() }
            } else {
                TwoParticleState::new(self.sites, amps, time)?
            };
            states.push(state);
            log_norms.push(log_norm);
        }
        Ok(Trajectory { states, log_norms, method: self.method(), fallback: self.fallback.clone() })
    }
}

/// One-shot evolution of `state0` to each of `times`.
pub fn evolve(
    params: &ModelParams,
    state0: &TwoParticleState,
    times: &[f64],
    opts: &PropagatorOptions,
) -> Result<Trajectory> {
    Propagator::for_state(params, state0, opts)?.evolve(state0, times)
}

/// Normalized evolution under an arbitrary dense matrix, returning
/// `(psi(t), ln ||exp(-iHt) psi(0)||)` per time.
pub fn evolve_dense(
    matrix: &CMatrix,
    psi0: &[Complex64],
    times: &[f64],
    opts: &PropagatorOptions,
) -> Result<Vec<(Vec<Complex64>, f64)>> {
    if psi0.len() != matrix.nrows() || matrix.nrows() != matrix.ncols() {
        return Err(Error::DimensionMismatch { expected: matrix.nrows(), actual: psi0.len() });
    }
    if linalg::norm2(psi0) == 0.0 {
        return Err(Error::ZeroVector);
    }
    check_times(times)?;
    let direct = || DirectEngine {
        op: Operator::Dense(matrix.clone()),
        rtol: opts.rtol,
        atol: opts.atol,
        max_steps: opts.max_steps,
    };
    let mut raw = match opts.method {
        PropagatorMethod::DirectIntegrator => direct().evolve(psi0, times)?,
        PropagatorMethod::Spectral => {
            let block = SpectralBlock::new(matrix, None)?;
            if block.condition > opts.condition_limit {
                direct().evolve(psi0, times)?
            } else {
                SpectralEngine { blocks: vec![block], rule: opts.coefficients }.evolve(psi0, times)?
            }
        }
    };
    for (v, _) in raw.iter_mut() {
        let norm = linalg::norm2(v);
        v.iter_mut().for_each(|a| *a /= norm);
    }
    Ok(raw)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BunchingTime {
    Reached { tau: f64 },
    NotReached { t_max: f64 },
}

impl BunchingTime {
    pub fn tau(&self) -> Option<f64> {
        match self {
            BunchingTime::Reached { tau } => Some(*tau),
            BunchingTime::NotReached { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BunchingOptions {
    pub target: f64,
    pub t_max: f64,
    /// Output sampling step before bisection.
    pub dt: f64,
    /// Bisection stops once the bracket is this narrow.
    pub resolution: f64,
}

impl Default for BunchingOptions {
    fn default() -> Self {
        Self { target: 0.8, t_max: 200.0, dt: 0.5, resolution: 1e-3 }
    }
}

impl BunchingOptions {
    fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::InvalidParameter(format!("bunching target must lie in (0, 1), got {}", self.target)));
        }
        if !(self.dt > 0.0 && self.t_max >= 0.0 && self.resolution > 0.0) {
            return Err(Error::InvalidParameter("dt, t_max and resolution must be positive".into()));
        }
        Ok(())
    }

    /// `0, dt, 2 dt, ...` up to and including `t_max`.
    pub fn sample_times(&self) -> Vec<f64> {
        let steps = (self.t_max / self.dt).floor() as usize;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * self.dt).collect();
        if times.last().is_some_and(|&t| t < self.t_max - 1e-12) {
            times.push(self.t_max);
        }
        times
    }
}

/// `(t, P_bun(t))` for each time.
pub fn bunching_curve(propagator: &Propagator, state0: &TwoParticleState, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    let traj = propagator.evolve(state0, times)?;
    Ok(traj.states.iter().map(|s| (s.time(), bunching_probability(s))).collect())
}

/// First time `P_bun` reaches `opts.target`, refined by bisection between samples.
pub fn bunching_time_with(
    propagator: &Propagator,
    state0: &TwoParticleState,
    opts: &BunchingOptions,
) -> Result<BunchingTime> {
    opts.validate()?;
    let times = opts.sample_times();
    let traj = propagator.evolve(state0, &times)?;
    let Some(k) = traj.states.iter().position(|s| bunching_probability(s) >= opts.target) else {
        return Ok(BunchingTime::NotReached { t_max: opts.t_max });
    };
    if k == 0 {
        return Ok(BunchingTime::Reached { tau: traj.states[0].time() });
    }
    let start = &traj.states[k - 1];
    let (mut lo, mut hi) = (0.0, traj.states[k].time() - start.time());
    while hi - lo > opts.resolution {
        let mid = 0.5 * (lo + hi);
        let s = propagator.evolve(start, &[mid])?;
        if bunching_probability(&s.states[0]) >= opts.target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BunchingTime::Reached { tau: start.time() + 0.5 * (lo + hi) })
}

/// Bunching time for particles starting at sites `n1`, `n2` (0-based).
pub fn bunching_time(
    params: &ModelParams,
    n1: usize,
    n2: usize,
    opts: &BunchingOptions,
    prop: &PropagatorOptions,
) -> Result<BunchingTime> {
    let state = prepare_pair_state(params, n1, n2)?;
    let propagator = Propagator::for_state(params, &state, prop)?;
    bunching_time_with(&propagator, &state, opts)
}

pub fn write_bunching_csv<W: Write>(curve: &[(f64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "t,p_bun")?;
    for (t, p) in curve {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

/// Flat `(t, n, m, prob)` rows for every grid point of every state.
pub fn write_snapshots_csv<W: Write>(states: &[TwoParticleState], mut out: W) -> Result<()> {
    writeln!(out, "t,n,m,prob")?;
    for s in states {
        let l = s.sites();
        for n in 0..l {
            for m in 0..l {
                writeln!(out, "{},{},{},{}", s.time(), n, m, s.probability(n, m))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Snapshot {
    t: f64,
    prob: Vec<Vec<f64>>,
}

/// `[{ "t": .., "prob": [[..L..], ..L..] }, ..]`.
pub fn write_snapshots_json<W: Write>(states: &[TwoParticleState], out: W) -> Result<()> {
    let snaps: Vec<Snapshot> = states
        .iter()
        .map(|s| Snapshot {
            t: s.time(),
            prob: (0..s.sites()).map(|n| (0..s.sites()).map(|m| s.probability(n, m)).collect()).collect(),
        })
        .collect();
    serde_json::to_writer(out, &snaps)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rational;

    fn params(p: u64, q: u64, u: f64, h: f64) -> ModelParams {
        ModelParams::new(1.0, u, 0.15, Rational::new(p, q).unwrap(), 0.0, h).unwrap()
    }

    #[test]
    fn pair_state_examples() {
        let p = params(34, 55, 10.0, 1.0);
        let s = prepare_pair_state(&p, 25, 26).unwrap();
        let nonzero: Vec<_> = s.amplitudes().iter().filter(|a| a.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 2);
        assert!(nonzero.iter().all(|a| (a.re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15));
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert_eq!(bunching_probability(&s), 0.0);

        let d = prepare_pair_state(&p, 0, 0).unwrap();
        assert_eq!(d.amplitude(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(bunching_probability(&d), 1.0);
        assert!(prepare_pair_state(&p, 0, 55).is_err());
    }

    #[test]
    fn zero_time_returns_initial_state() {
        let p = params(8, 13, 3.0, 1.0);
        let s = prepare_pair_state(&p, 2, 5).unwrap();
        for opts in [PropagatorOptions::default(), PropagatorOptions::direct()] {
            let traj = evolve(&p, &s, &[0.0, 1.0], &opts).unwrap();
            assert_eq!(traj.states[0], s);
        }
    }

    #[test]
    fn spectral_and_direct_agree_small() {
        let p = params(8, 13, 3.0, 1.0);
        let s = prepare_pair_state(&p, 2, 5).unwrap();
        let times = [0.5, 3.0, 10.0];
        let a = evolve(&p, &s, &times, &PropagatorOptions::default()).unwrap();
        let b = evolve(&p, &s, &times, &PropagatorOptions::direct()).unwrap();
        assert_eq!(a.method, PropagatorMethod::Spectral);
        assert_eq!(b.method, PropagatorMethod::DirectIntegrator);
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(x.max_deviation(y) < 1e-7, "{}", x.max_deviation(y));
        }
        for (x, y) in a.log_norms.iter().zip(&b.log_norms) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn adjoint_projection_matches_solve() {
        let p = params(8, 13, 2.0, 0.7);
        let s = prepare_pair_state(&p, 1, 4).unwrap();
        let adj = PropagatorOptions { coefficients: CoefficientRule::AdjointProjection, ..Default::default() };
        let a = evolve(&p, &s, &[4.0], &PropagatorOptions::default()).unwrap();
        let b = evolve(&p, &s, &[4.0], &adj).unwrap();
        let dev = a.states[0].max_deviation(&b.states[0]);
        assert!(dev < 1e-7, "{dev}");
    }

    #[test]
    fn ill_conditioned_falls_back() {
        let p = params(8, 13, 2.0, 0.7);
        let s = prepare_pair_state(&p, 1, 4).unwrap();
        let opts = PropagatorOptions { condition_limit: 1.0, ..Default::default() };
        let traj = evolve(&p, &s, &[1.0], &opts).unwrap();
        assert_eq!(traj.method, PropagatorMethod::DirectIntegrator);
        assert!(traj.fallback.is_some());
    }

    #[test]
    fn bunching_time_of_doublon_is_zero() {
        let p = params(8, 13, 10.0, 1.0);
        let t = bunching_time(&p, 3, 3, &BunchingOptions::default(), &PropagatorOptions::default()).unwrap();
        assert_eq!(t, BunchingTime::Reached { tau: 0.0 });
        let bad = BunchingOptions { target: 1.0, ..Default::default() };
        assert!(bunching_time(&p, 3, 4, &bad, &PropagatorOptions::default()).is_err());
    }

    #[test]
    fn times_must_be_sorted() {
        let p = params(5, 8, 1.0, 0.0);
        let s = prepare_pair_state(&p, 0, 1).unwrap();
        assert!(evolve(&p, &s, &[1.0, 0.5], &PropagatorOptions::default()).is_err());
        assert!(evolve(&p, &s, &[-1.0], &PropagatorOptions::default()).is_err());
    }

    #[test]
    fn snapshot_outputs() {
        let p = params(2, 3, 1.0, 0.0);
        let s = prepare_pair_state(&p, 0, 1).unwrap();
        let mut csv = Vec::new();
        write_snapshots_csv(std::slice::from_ref(&s), &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
        let mut json = Vec::new();
        write_snapshots_json(&[s], &mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert!((v[0]["prob"][0][1].as_f64().unwrap() - 0.5).abs() < 1e-15);
    }
}
