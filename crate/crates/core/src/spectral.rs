//! Eigendecomposition and the spectral / localization diagnostics:
//! `epsilon = max |Im E|`, inverse participation ratios, extended vs
//! localized classification, and scans over the non-Hermiticity `h`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{h1_at_phase, ExchangeSector, PairOperator, SectorBasis};
use crate::linalg::{self, CMatrix};
use crate::model::ModelParams;

/// A spectrum is declared real when `epsilon < REAL_SPECTRUM_RTOL * max |E|`.
pub const REAL_SPECTRUM_RTOL: f64 = 1e-8;

/// Spectral propagation refuses eigenvector matrices above this condition estimate.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Default localization threshold is `LOCALIZATION_FACTOR / L`.
pub const LOCALIZATION_FACTOR: f64 = 10.0;

/// Which Hilbert space a computation runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Single,
    Two,
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "one" | "1" => Ok(Sector::Single),
            "two" | "2" => Ok(Sector::Two),
            _ => Err(Error::InvalidParameter(format!("unknown sector {s:?} (expected single or two)"))),
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sector::Single => "single",
            Sector::Two => "two",
        })
    }
}

/// How much eigenvector information to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vectors {
    /// Eigenvalues only.
    None,
    /// Compute eigenvectors for IPR, doublon weight and conditioning, then drop them.
    Diagnostics,
    /// Keep the eigenvectors (full-space columns, unit norm).
    Full,
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors as unit-norm columns, when requested.
    pub eigenvectors: Option<CMatrix>,
    /// One entry per eigenvalue whenever eigenvectors were computed.
    pub ipr: Vec<f64>,
    pub epsilon: f64,
    /// 1-norm condition estimate of the eigenvector matrix.
    pub eigenvector_condition: Option<f64>,
    /// Two-particle spectra only: exchange parity of each eigenstate.
    pub exchange: Vec<ExchangeSector>,
    /// Two-particle spectra only: `sum_n |psi_{n,n}|^2` of each eigenstate.
    pub diagonal_weight: Vec<f64>,
}

impl SpectrumResult {
    fn from_values(eigenvalues: Vec<Complex64>) -> Self {
        let epsilon = epsilon(&eigenvalues);
        Self {
            eigenvalues,
            eigenvectors: None,
            ipr: Vec::new(),
            epsilon,
            eigenvector_condition: None,
            exchange: Vec::new(),
            diagonal_weight: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_real(&self) -> bool {
        is_real_spectrum(&self.eigenvalues, REAL_SPECTRUM_RTOL)
    }

    pub fn ipr_max(&self) -> Option<f64> {
        self.ipr.iter().copied().reduce(f64::max)
    }

    pub fn ipr_min(&self) -> Option<f64> {
        self.ipr.iter().copied().reduce(f64::min)
    }

    /// True when the eigenvector matrix is numerically near-defective.
    pub fn is_ill_conditioned(&self) -> bool {
        self.eigenvector_condition.is_some_and(|c| !(c <= CONDITION_LIMIT))
    }

    pub fn max_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }
}

pub fn epsilon(eigenvalues: &[Complex64]) -> f64 {
    eigenvalues.iter().map(|e| e.im.abs()).fold(0.0, f64::max)
}

/// `max |Im E| < rtol * max |E|`.
pub fn is_real_spectrum(eigenvalues: &[Complex64], rtol: f64) -> bool {
    let scale = eigenvalues.iter().map(|e| e.norm()).fold(0.0, f64::max);
    epsilon(eigenvalues) < rtol * scale.max(f64::MIN_POSITIVE)
}

/// Inverse participation ratio `sum |psi|^4 / (sum |psi|^2)^2`.
pub fn ipr(state: &[Complex64]) -> Result<f64> {
    // rescale first so |psi|^4 cannot underflow or overflow
    let peak = state.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::ZeroVector);
    }
    let (mut second, mut fourth) = (0.0, 0.0);
    for c in state {
        let p = (c / peak).norm_sqr();
        second += p;
        fourth += p * p;
    }
    Ok(fourth / (second * second))
}

/// General dense eigendecomposition with diagnostics.
pub fn eigendecompose(h: &CMatrix, want_vectors: bool) -> Result<SpectrumResult> {
    let (values, vectors) = linalg::eigen(h.as_ref(), want_vectors)?;
    let mut result = SpectrumResult::from_values(values);
    if let Some(v) = vectors {
        let n = v.ncols();
        result.ipr = (0..n).map(|j| ipr(&v.col(j).iter().copied().collect::<Vec<_>>())).collect::<Result<_>>()?;
        result.eigenvector_condition = Some(linalg::condition_estimate(v.as_ref()));
        result.eigenvectors = Some(v);
    }
    Ok(result)
}

pub fn single_particle_spectrum(params: &ModelParams, want_vectors: bool) -> Result<SpectrumResult> {
    eigendecompose(&h1_at_phase(params, params.phase()), want_vectors)
}

/// Eigenpairs of one exchange sector, in that sector's basis.
#[derive(Clone, Debug)]
pub struct SectorEigen {
    pub basis: SectorBasis,
    pub eigenvalues: Vec<Complex64>,
    pub eigenvectors: Option<CMatrix>,
}

pub fn sector_eigen(params: &ModelParams, sector: ExchangeSector, want_vectors: bool) -> Result<SectorEigen> {
    let basis = SectorBasis::new(params.sites(), sector);
    if basis.is_empty() {
        return Ok(SectorEigen {
            basis,
            eigenvalues: Vec::new(),
            eigenvectors: want_vectors.then(|| Mat::zeros(0, 0)),
        });
    }
    let h = PairOperator::new(params).sector_matrix(&basis);
    let (eigenvalues, eigenvectors) = linalg::eigen(h.as_ref(), want_vectors)?;
    Ok(SectorEigen { basis, eigenvalues, eigenvectors })
}

/// Spectrum of one exchange sector with per-state diagnostics.
pub fn sector_spectrum(params: &ModelParams, sector: ExchangeSector, vectors: Vectors) -> Result<SpectrumResult> {
    assemble_two_particle(params, &[sector], vectors)
}

/// Two-particle spectrum, diagonalizing the two exchange sectors separately.
///
/// `H2` commutes with particle exchange, so the union of the sector spectra
/// is the full `L^2` spectrum.
pub fn two_particle_spectrum(params: &ModelParams, vectors: Vectors) -> Result<SpectrumResult> {
    assemble_two_particle(params, &ExchangeSector::BOTH, vectors)
}

fn assemble_two_particle(params: &ModelParams, sectors: &[ExchangeSector], vectors: Vectors) -> Result<SpectrumResult> {
    let want = vectors != Vectors::None;
    let parts = sectors.iter().map(|&s| sector_eigen(params, s, want)).collect::<Result<Vec<_>>>()?;

    let values: Vec<Complex64> = parts.iter().flat_map(|p| p.eigenvalues.iter().copied()).collect();
    let mut result = SpectrumResult::from_values(values);
    result.exchange = parts.iter().flat_map(|p| std::iter::repeat_n(p.basis.sector(), p.eigenvalues.len())).collect();
    if !want {
        return Ok(result);
    }

    let dim = params.pair_dim();
    let mut full = (vectors == Vectors::Full).then(|| Mat::<Complex64>::zeros(dim, result.len()));
    let (mut max_norm, mut max_inv) = (0.0f64, 0.0f64);
    let mut column = 0;
    for part in &parts {
        let v = part.eigenvectors.as_ref().expect("vectors requested");
        if v.ncols() > 0 {
            let lu = v.partial_piv_lu();
            max_norm = max_norm.max(linalg::one_norm(v.as_ref()));
            max_inv = max_inv.max(linalg::inverse_one_norm_estimate(&lu));
        }
        for j in 0..v.ncols() {
            let col = || v.col(j).iter().copied();
            let norm2: f64 = col().map(|c| c.norm_sqr()).sum();
            result.ipr.push(part.basis.fourth_moment(col()) / (norm2 * norm2));
            result.diagonal_weight.push(part.basis.diagonal_weight(col()) / norm2);
            if let Some(full) = full.as_mut() {
                let coeffs: Vec<Complex64> = col().collect();
                let mut embedded = vec![Complex64::new(0.0, 0.0); dim];
                part.basis.embed_into(&coeffs, &mut embedded);
                for (i, x) in embedded.into_iter().enumerate() {
                    full[(i, column)] = x;
                }
            }
            column += 1;
        }
    }
    result.eigenvector_condition = Some(max_norm * max_inv);
    result.eigenvectors = full;
    Ok(result)
}

pub fn spectrum(params: &ModelParams, sector: Sector, vectors: Vectors) -> Result<SpectrumResult> {
    match sector {
        Sector::Single => single_particle_spectrum(params, vectors != Vectors::None).map(|mut s| {
            if vectors != Vectors::Full {
                s.eigenvectors = None;
            }
            s
        }),
        Sector::Two => two_particle_spectrum(params, vectors),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Localization {
    Extended,
    Localized,
}

/// Localization verdict for one eigenstate and the IPR threshold that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateClass {
    pub kind: Localization,
    pub threshold: f64,
}

/// IPR threshold `factor / L` separating `~L^-2` extended states from
/// `O(1)` localized ones.
pub fn localization_threshold(sites: usize, factor: f64) -> f64 {
    factor / sites as f64
}

pub fn classify_ipr(ipr: f64, threshold: f64) -> StateClass {
    let kind = if ipr > threshold { Localization::Localized } else { Localization::Extended };
    StateClass { kind, threshold }
}

pub fn classify_states(spectrum: &SpectrumResult, params: &ModelParams, factor: f64) -> Result<Vec<StateClass>> {
    if spectrum.ipr.is_empty() && !spectrum.is_empty() {
        return Err(Error::MissingEigenvectors);
    }
    let threshold = localization_threshold(params.sites(), factor);
    Ok(spectrum.ipr.iter().map(|&p| classify_ipr(p, threshold)).collect())
}

/// One row of an `h` scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub h: f64,
    pub epsilon: f64,
    pub ipr_max: Option<f64>,
    pub ipr_min: Option<f64>,
}

/// `(h, epsilon, IPR_max, IPR_min)` for every `h` in the grid, in grid order.
pub fn epsilon_scan(params: &ModelParams, sector: Sector, h_grid: &[f64], with_ipr: bool) -> Result<Vec<ScanRow>> {
    if h_grid.is_empty() {
        return Err(Error::InvalidParameter("empty h grid".into()));
    }
    let vectors = if with_ipr { Vectors::Diagnostics } else { Vectors::None };
    h_grid
        .par_iter()
        .map(|&h| {
            let at = |e: Error| Error::AtNonHermiticity { h, source: Box::new(e) };
            let p = params.clone().with_non_hermiticity(h).map_err(at)?;
            let s = spectrum(&p, sector, vectors).map_err(at)?;
            Ok(ScanRow { h, epsilon: s.epsilon, ipr_max: s.ipr_max(), ipr_min: s.ipr_min() })
        })
        .collect()
}

/// Bisection for the first `h` at which `is_complex` flips from false to true.
///
/// Requires `is_complex(lo) == false` and `is_complex(hi) == true`; returns
/// the midpoint of the final bracket of width `<= tol`.
pub fn bisect_transition(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut is_complex: impl FnMut(f64) -> Result<bool>,
) -> Result<f64> {
    if is_complex(lo)? || !is_complex(hi)? {
        return Err(Error::Precondition(format!("no real-to-complex transition bracketed in [{lo}, {hi}]")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_complex(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Real-to-complex transition of the full spectrum in `sector`.
pub fn spectral_transition(params: &ModelParams, sector: Sector, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    bisect_transition(lo, hi, tol, |h| {
        let p = params.clone().with_non_hermiticity(h)?;
        Ok(!spectrum(&p, sector, Vectors::None)?.is_real())
    })
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut out: W) -> Result<()> {
    writeln!(out, "h,epsilon,ipr_max,ipr_min")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(out, "{},{},{},{}", r.h, r.epsilon, opt(r.ipr_max), opt(r.ipr_min))?;
    }
    Ok(())
}

/// One eigenvalue per row: `re,im[,ipr]`.
pub fn write_spectrum_csv<W: Write>(spectrum: &SpectrumResult, mut out: W) -> Result<()> {
    if spectrum.ipr.is_empty() {
        writeln!(out, "re,im")?;
        for e in &spectrum.eigenvalues {
            writeln!(out, "{},{}", e.re, e.im)?;
        }
    } else {
        writeln!(out, "re,im,ipr")?;
        for (e, p) in spectrum.eigenvalues.iter().zip(&spectrum.ipr) {
            writeln!(out, "{},{},{}", e.re, e.im, p)?;
        }
    }
    Ok(())
}
