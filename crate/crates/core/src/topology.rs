//! Point-gap winding numbers from the phase of `det(H(theta_base + theta/L) - E_B)`
//! as `theta` runs once around `[0, 2 pi]`.
//!
//! Shifting the potential phase by `2 pi / L` is a lattice translation
//! (`L` is the denominator of `alpha`), so the path is closed and the total
//! unwrapped phase is `2 pi w` for an integer `w`.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{h1_at_phase, ExchangeSector, PairOperator, SectorBasis};
use crate::linalg::{self, wrap_phase, CMatrix, LogDet};
use crate::model::ModelParams;
use crate::spectral::{self, Sector, Vectors};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindingMethod {
    PhaseUnwrap,
    SlopeApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindingOptions {
    /// Initial number of intervals on `[0, 2 pi]`.
    pub n_samples: usize,
    /// Upper bound for automatic grid doubling.
    pub max_samples: usize,
    /// Adjacent-sample phase steps above this trigger a doubling.
    pub jump_limit: f64,
    /// Minimum allowed distance between `E_B` and the spectrum.
    pub min_gap_tol: f64,
    /// Recompute on the doubled grid and require the same integer.
    pub verify_refinement: bool,
    /// Use `det(H(-phi) - E) = conj det(H(phi) - E)` (real `E_B`, no loss,
    /// base phase 0 or pi) to sample only half the loop.
    pub use_reflection: bool,
}

impl Default for WindingOptions {
    fn default() -> Self {
        Self {
            n_samples: 256,
            max_samples: 4096,
            jump_limit: 0.6 * PI,
            min_gap_tol: 1e-4,
            verify_refinement: true,
            use_reflection: true,
        }
    }
}

impl WindingOptions {
    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self.max_samples = self.max_samples.max(n);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 64 || !self.n_samples.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("n_samples must be even and >= 64, got {}", self.n_samples)));
        }
        if !(self.jump_limit > 0.0 && self.jump_limit < PI) {
            return Err(Error::InvalidParameter("jump_limit must lie in (0, pi)".into()));
        }
        if !(self.min_gap_tol >= 0.0) {
            return Err(Error::InvalidParameter("min_gap_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindingResult {
    pub base_energy: Complex64,
    pub winding: i64,
    /// Total unwrapped phase over `2 pi` before rounding (slope value for `SlopeApprox`).
    pub raw_winding: f64,
    pub method: WindingMethod,
    /// Grid size that produced `winding`.
    pub theta_samples: usize,
    /// Grid size of the refinement check, if it ran.
    pub verified_with: Option<usize>,
    /// Distance from `E_B` to the spectrum at the base phase.
    pub min_gap: f64,
    /// Smallest `1 / (sqrt(n) est ||(H - E_B)^-1||_1)` over the sampled path, a
    /// resolvent lower-bound proxy for the gap along the whole loop.
    pub resolvent_gap: f64,
    /// Largest adjacent-sample phase step on the reported grid.
    pub max_phase_step: f64,
}

/// Matrices whose determinant phase is tracked: one block for a single
/// particle, one block per exchange sector for two particles.
struct PathFamily {
    params: ModelParams,
    sector: Sector,
    bases: Vec<SectorBasis>,
}

struct Sample {
    log_det: LogDet,
    resolvent_gap: f64,
}

impl PathFamily {
    fn new(params: &ModelParams, sector: Sector) -> Self {
        let bases = match sector {
            Sector::Single => Vec::new(),
            Sector::Two => ExchangeSector::BOTH.iter().map(|&s| SectorBasis::new(params.sites(), s)).collect(),
        };
        Self { params: params.clone(), sector, bases }
    }

    fn blocks(&self, phase: f64) -> Vec<CMatrix> {
        match self.sector {
            Sector::Single => vec![h1_at_phase(&self.params, phase)],
            Sector::Two => {
                let op = PairOperator::at_phase(&self.params, phase);
                self.bases.iter().filter(|b| !b.is_empty()).map(|b| op.sector_matrix(b)).collect()
            }
        }
    }

    fn phase_at(&self, theta: f64) -> f64 {
        self.params.phase() + theta / self.params.sites() as f64
    }

    fn sample(&self, theta: f64, energy: Complex64) -> Result<Sample> {
        let mut total = LogDet { log_abs: 0.0, phase: 0.0 };
        let mut resolvent_gap = f64::INFINITY;
        for mut block in self.blocks(self.phase_at(theta)) {
            let n = block.nrows();
            for i in 0..n {
                block[(i, i)] -= energy;
            }
            let lu = block.partial_piv_lu();
            let inv = linalg::inverse_one_norm_estimate(&lu);
            if !inv.is_finite() {
                return Err(Error::BaseEnergyOnSpectrum { re: energy.re, im: energy.im, min_gap: 0.0, tolerance: 0.0 });
            }
            resolvent_gap = resolvent_gap.min(1.0 / ((n as f64).sqrt() * inv));
            total = total.combine(linalg::log_det_from_lu(&lu));
        }
        Ok(Sample { log_det: total, resolvent_gap })
    }

    fn reflection_applies(&self, energy: Complex64) -> bool {
        energy.im == 0.0 && self.params.loss_rate() == 0.0 && self.params.phase().sin().abs() < 1e-15
    }
}

/// Sampled determinant phases on `theta_k = 2 pi k / n`, either for
/// `k = 0..=n` or, under reflection, for `k = 0..=n/2`.
struct Trace {
    n: usize,
    reflected: bool,
    samples: Vec<Sample>,
}

impl Trace {
    fn theta(&self, k: usize) -> f64 {
        TAU * k as f64 / self.n as f64
    }

    fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.windows(2).map(|w| wrap_phase(w[1].log_det.phase - w[0].log_det.phase))
    }

    fn max_step(&self) -> f64 {
        self.steps().map(f64::abs).fold(0.0, f64::max)
    }

    /// Unwrapped phase relative to the first sample.
    fn unwrapped(&self) -> Vec<f64> {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(self.steps().map(|d| {
                acc += d;
                acc
            }))
            .collect()
    }

    /// Total phase over the full loop divided by `2 pi`.
    fn raw_winding(&self) -> f64 {
        let half_or_full: f64 = self.steps().sum();
        if self.reflected {
            // second half is the conjugate mirror of the first
            2.0 * half_or_full / TAU
        } else {
            half_or_full / TAU
        }
    }

    fn resolvent_gap(&self) -> f64 {
        self.samples.iter().map(|s| s.resolvent_gap).fold(f64::INFINITY, f64::min)
    }
}

fn sample_points(family: &PathFamily, energy: Complex64, thetas: &[f64]) -> Result<Vec<Sample>> {
    thetas.par_iter().map(|&t| family.sample(t, energy)).collect()
}

fn initial_trace(family: &PathFamily, energy: Complex64, n: usize, reflected: bool) -> Result<Trace> {
    let last = if reflected { n / 2 } else { n };
    let thetas: Vec<f64> = (0..=last).map(|k| TAU * k as f64 / n as f64).collect();
    Ok(Trace { n, reflected, samples: sample_points(family, energy, &thetas)? })
}

/// Doubles the grid, reusing every existing sample.
fn refine(family: &PathFamily, energy: Complex64, trace: Trace) -> Result<Trace> {
    let n = trace.n * 2;
    let mids: Vec<f64> = (0..trace.samples.len() - 1).map(|k| TAU * (2 * k + 1) as f64 / n as f64).collect();
    let mut fresh = sample_points(family, energy, &mids)?.into_iter();
    let mut samples = Vec::with_capacity(2 * trace.samples.len() - 1);
    for (k, s) in trace.samples.into_iter().enumerate() {
        if k > 0 {
            samples.push(fresh.next().expect("one midpoint per interval"));
        }
        samples.push(s);
    }
    Ok(Trace { n, reflected: trace.reflected, samples })
}

fn gap_to(eigenvalues: &[Complex64], energy: Complex64) -> f64 {
    eigenvalues.iter().map(|e| (e - energy).norm()).fold(f64::INFINITY, f64::min)
}

fn integer_winding(raw: f64) -> Result<i64> {
    let w = raw.round();
    if (raw - w).abs() > 1e-3 {
        return Err(Error::Precondition(format!("unwrapped phase is not a multiple of 2 pi (raw winding {raw})")));
    }
    Ok(w as i64)
}

fn winding_on_family(
    family: &PathFamily,
    base_eigenvalues: &[Complex64],
    energy: Complex64,
    opts: &WindingOptions,
) -> Result<WindingResult> {
    let min_gap = gap_to(base_eigenvalues, energy);
    if min_gap < opts.min_gap_tol {
        return Err(Error::BaseEnergyOnSpectrum { re: energy.re, im: energy.im, min_gap, tolerance: opts.min_gap_tol });
    }
    let reflected = opts.use_reflection && family.reflection_applies(energy);
    let mut trace = initial_trace(family, energy, opts.n_samples, reflected)?;
    loop {
        let step = trace.max_step();
        if step > opts.jump_limit && trace.n * 2 <= opts.max_samples {
            trace = refine(family, energy, trace)?;
            continue;
        }
        if step >= PI {
            return Err(Error::PhaseJump { jump: step, samples: trace.n });
        }
        let raw = trace.raw_winding();
        let winding = integer_winding(raw)?;
        let mut result = WindingResult {
            base_energy: energy,
            winding,
            raw_winding: raw,
            method: WindingMethod::PhaseUnwrap,
            theta_samples: trace.n,
            verified_with: None,
            min_gap,
            resolvent_gap: trace.resolvent_gap(),
            max_phase_step: step,
        };
        if !opts.verify_refinement || trace.n * 2 > opts.max_samples {
            return Ok(result);
        }
        let fine = refine(family, energy, trace)?;
        let fine_w = integer_winding(fine.raw_winding())?;
        if fine_w == winding {
            result.verified_with = Some(fine.n);
            result.resolvent_gap = fine.resolvent_gap();
            return Ok(result);
        }
        if fine.n * 2 > opts.max_samples {
            return Err(Error::UnstableWinding { coarse: winding, fine: fine_w });
        }
        trace = fine;
    }
}

fn base_eigenvalues(params: &ModelParams, sector: Sector) -> Result<Vec<Complex64>> {
    Ok(spectral::spectrum(params, sector, Vectors::None)?.eigenvalues)
}

/// Winding number of the determinant phase around `E_B`.
pub fn winding_number(
    params: &ModelParams,
    base_energy: Complex64,
    sector: Sector,
    opts: &WindingOptions,
) -> Result<WindingResult> {
    let mut all = winding_numbers(params, &[base_energy], sector, opts)?;
    all.pop().expect("one energy")
}

/// Winding numbers for several base energies, sharing the base-phase spectrum
/// used for the gap check. One result per energy, in input order.
pub fn winding_numbers(
    params: &ModelParams,
    energies: &[Complex64],
    sector: Sector,
    opts: &WindingOptions,
) -> Result<Vec<Result<WindingResult>>> {
    opts.validate()?;
    let family = PathFamily::new(params, sector);
    let eigenvalues = base_eigenvalues(params, sector)?;
    Ok(energies.iter().map(|&e| winding_on_family(&family, &eigenvalues, e, opts)).collect())
}

/// `d omega / d theta` at `theta_0` by a central difference with step
/// `2 pi / n_samples`; approximates the winding when the phase advances
/// uniformly.
pub fn winding_slope(
    params: &ModelParams,
    base_energy: Complex64,
    sector: Sector,
    theta_0: f64,
    opts: &WindingOptions,
) -> Result<WindingResult> {
    opts.validate()?;
    let family = PathFamily::new(params, sector);
    let min_gap = gap_to(&base_eigenvalues(params, sector)?, base_energy);
    if min_gap < opts.min_gap_tol {
        return Err(Error::BaseEnergyOnSpectrum {
            re: base_energy.re,
            im: base_energy.im,
            min_gap,
            tolerance: opts.min_gap_tol,
        });
    }
    let delta = TAU / opts.n_samples as f64;
    let pair = sample_points(&family, base_energy, &[theta_0 - delta, theta_0 + delta])?;
    let step = wrap_phase(pair[1].log_det.phase - pair[0].log_det.phase);
    if step.abs() >= PI - 1e-9 {
        return Err(Error::PhaseJump { jump: step.abs(), samples: opts.n_samples });
    }
    let slope = step / (2.0 * delta);
    Ok(WindingResult {
        base_energy,
        winding: slope.round() as i64,
        raw_winding: slope,
        method: WindingMethod::SlopeApprox,
        theta_samples: opts.n_samples,
        verified_with: None,
        min_gap,
        resolvent_gap: pair[0].resolvent_gap.min(pair[1].resolvent_gap),
        max_phase_step: step.abs(),
    })
}

/// One row of a determinant-phase trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub theta: f64,
    /// `ln |det(H - E_B)|`.
    pub log_abs: f64,
    /// Unwrapped phase, starting from the wrapped phase at `theta = 0`.
    pub omega: f64,
}

/// Full `theta` trace on a uniform grid of `n_samples` intervals, for diagnostics.
pub fn phase_trace(
    params: &ModelParams,
    base_energy: Complex64,
    sector: Sector,
    n_samples: usize,
) -> Result<Vec<PhasePoint>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let family = PathFamily::new(params, sector);
    let trace = initial_trace(&family, base_energy, n_samples, false)?;
    let start = trace.samples[0].log_det.phase;
    Ok(trace
        .unwrapped()
        .into_iter()
        .enumerate()
        .map(|(k, omega)| PhasePoint {
            theta: trace.theta(k),
            log_abs: trace.samples[k].log_det.log_abs,
            omega: start + omega,
        })
        .collect())
}

pub fn write_phase_trace_csv<W: Write>(points: &[PhasePoint], mut out: W) -> Result<()> {
    writeln!(out, "theta,log_abs_det,omega")?;
    for p in points {
        writeln!(out, "{},{},{}", p.theta, p.log_abs, p.omega)?;
    }
    Ok(())
}

/// Dense determinant phase of an arbitrary matrix minus `E`; used by tests
/// and the benches.
pub fn shifted_log_det(matrix: &CMatrix, energy: Complex64) -> LogDet {
    let n = matrix.nrows();
    let shifted = Mat::from_fn(n, n, |i, j| if i == j { matrix[(i, j)] - energy } else { matrix[(i, j)] });
    linalg::log_det(shifted.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rational;

    fn params(p: u64, q: u64, u: f64, h: f64) -> ModelParams {
        ModelParams::new(1.0, u, 0.15, Rational::new(p, q).unwrap(), 0.0, h).unwrap()
    }

    fn quick() -> WindingOptions {
        WindingOptions { n_samples: 64, max_samples: 1024, ..WindingOptions::default() }
    }

    #[test]
    fn real_spectrum_gives_zero() {
        let p = params(34, 55, 0.0, 1.0);
        let r = winding_number(&p, Complex64::new(0.0, 0.0), Sector::Single, &quick()).unwrap();
        assert_eq!(r.winding, 0);
        assert_eq!(r.method, WindingMethod::PhaseUnwrap);
        assert!(r.verified_with.is_some());
    }

    #[test]
    fn single_particle_loop_winds_once() {
        let p = params(34, 55, 0.0, 3.3);
        // E_B = 0 sits inside the single loop |E| ~ (V/2) e^h
        let r = winding_number(&p, Complex64::new(0.0, 0.0), Sector::Single, &quick()).unwrap();
        assert_eq!(r.winding, -1);
    }

    #[test]
    fn reflection_matches_full_loop() {
        let p = params(5, 8, 2.0, 3.0);
        let e = Complex64::new(0.3, 0.0);
        let with = winding_number(&p, e, Sector::Two, &quick()).unwrap();
        let without = winding_number(&p, e, Sector::Two, &WindingOptions { use_reflection: false, ..quick() }).unwrap();
        assert_eq!(with.winding, without.winding);
        assert!((with.raw_winding - without.raw_winding).abs() < 1e-6);
    }

    #[test]
    fn energy_on_spectrum_is_rejected() {
        let p = params(5, 8, 0.0, 0.0);
        let e = spectral::single_particle_spectrum(&p, false).unwrap().eigenvalues[0];
        let err = winding_number(&p, e, Sector::Single, &quick()).unwrap_err();
        assert!(matches!(err, Error::BaseEnergyOnSpectrum { .. }));
    }

    #[test]
    fn too_few_samples_rejected() {
        let p = params(5, 8, 0.0, 0.0);
        let opts = WindingOptions { n_samples: 32, ..WindingOptions::default() };
        assert!(winding_number(&p, Complex64::new(5.0, 0.0), Sector::Single, &opts).is_err());
    }

    #[test]
    fn slope_is_zero_for_hermitian() {
        let p = params(34, 55, 0.0, 0.0);
        let s = winding_slope(&p, Complex64::new(0.0, 0.0), Sector::Single, 0.0, &quick()).unwrap();
        assert_eq!(s.raw_winding, 0.0);
        assert_eq!(s.method, WindingMethod::SlopeApprox);
    }

    #[test]
    fn trace_is_closed_loop() {
        let p = params(5, 8, 1.0, 3.0);
        let pts = phase_trace(&p, Complex64::new(0.1, 0.0), Sector::Two, 128).unwrap();
        assert_eq!(pts.len(), 129);
        // endpoints are translates of each other
        assert!((pts[0].log_abs - pts[128].log_abs).abs() < 1e-9);
        let turns = (pts[128].omega - pts[0].omega) / TAU;
        assert!((turns - turns.round()).abs() < 1e-9);
    }
}
