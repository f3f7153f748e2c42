//! Strong-interaction doublon model: a bound pair hopping with `J_e = 2J^2/U`
//! in the doubled potential `2 V_n`, the closed-form thresholds, and checks of
//! the effective model against the full two-particle problem.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, Propagator, PropagatorOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::ExchangeSector;
use crate::linalg::{self, CMatrix};
use crate::model::ModelParams;
use crate::spectral::{self, Vectors, REAL_SPECTRUM_RTOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Single-particle real-to-complex threshold `ln(2J/V)`.
    pub h_c: f64,
    /// Doublon threshold `max(0, h_c - ln(U/J))`.
    pub h_c_prime: f64,
    /// Interaction above which the doublon spectrum is complex at any `h > 0`: `2J^2/V`.
    pub u_c: f64,
}

pub fn thresholds(params: &ModelParams) -> Result<Thresholds> {
    let (j, u, v) = (params.hopping(), params.interaction(), params.amplitude());
    if v == 0.0 {
        return Err(Error::InvalidParameter("thresholds need V > 0".into()));
    }
    if !(u > 0.0) || !(j > 0.0) {
        return Err(Error::InvalidParameter("thresholds need J > 0 and U > 0".into()));
    }
    let h_c = (2.0 * j / v).ln();
    Ok(Thresholds { h_c, h_c_prime: (h_c - (u / j).ln()).max(0.0), u_c: 2.0 * j * j / v })
}

/// `J_e = 2J^2/U`.
pub fn effective_hopping(params: &ModelParams) -> Result<f64> {
    let u = params.interaction();
    if u == 0.0 {
        return Err(Error::InvalidParameter("the doublon model needs U != 0".into()));
    }
    Ok(2.0 * params.hopping().powi(2) / u)
}

#[derive(Clone, Debug)]
pub struct DoublonModel {
    pub effective_hopping: f64,
    /// `L x L` matrix acting on doublon amplitudes, measured from the energy `U`.
    pub matrix: CMatrix,
    pub params: ModelParams,
}

/// `H_eff[n, n +- 1] = J_e`, `H_eff[n, n] = 2 J_e + 2 V_n` on the ring.
pub fn build_doublon_model(params: &ModelParams) -> Result<DoublonModel> {
    let je = effective_hopping(params)?;
    let l = params.sites();
    let pot = params.potentials();
    let mut matrix = CMatrix::zeros(l, l);
    for n in 0..l {
        matrix[(n, n)] += Complex64::new(2.0 * je, 0.0) + pot[n] * 2.0;
        // accumulate so that L = 2 gets both bonds
        matrix[(n, params.wrap(n, 1))] += je;
        matrix[(n, params.wrap(n, -1))] += je;
    }
    Ok(DoublonModel { effective_hopping: je, matrix, params: params.clone() })
}

impl DoublonModel {
    pub fn eigenvalues(&self) -> Result<Vec<Complex64>> {
        Ok(linalg::eigen(self.matrix.as_ref(), false)?.0)
    }
}

/// Full-model eigenstates recognized as bound pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublonBranch {
    pub eigenvalues: Vec<Complex64>,
    pub diagonal_weights: Vec<f64>,
}

impl DoublonBranch {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        spectral::epsilon(&self.eigenvalues)
    }

    pub fn is_real(&self) -> bool {
        spectral::is_real_spectrum(&self.eigenvalues, REAL_SPECTRUM_RTOL)
    }
}

/// Selector for the bound-pair branch: `|E - U| < U/2` and diagonal weight above 1/2.
pub fn is_doublon_state(energy: Complex64, diagonal_weight: f64, interaction: f64) -> bool {
    (energy - interaction).norm() < 0.5 * interaction.abs() && diagonal_weight > 0.5
}

/// Doublons are exchange-symmetric, so only that sector is diagonalized.
pub fn doublon_branch(params: &ModelParams) -> Result<DoublonBranch> {
    let s = spectral::sector_spectrum(params, ExchangeSector::Symmetric, Vectors::Diagnostics)?;
    let u = params.interaction();
    let (eigenvalues, diagonal_weights) = s
        .eigenvalues
        .iter()
        .zip(&s.diagonal_weight)
        .filter(|(e, w)| is_doublon_state(**e, **w, u))
        .map(|(e, w)| (*e, *w))
        .unzip();
    Ok(DoublonBranch { eigenvalues, diagonal_weights })
}

/// Non-Hermiticity at which the full-model doublon branch turns complex.
pub fn doublon_transition(params: &ModelParams, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    spectral::bisect_transition(lo, hi, tol, |h| {
        let branch = doublon_branch(&params.clone().with_non_hermiticity(h)?)?;
        if branch.is_empty() {
            return Err(Error::Precondition(format!("no doublon branch found at h = {h}")));
        }
        Ok(!branch.is_real())
    })
}

/// Non-Hermiticity at which the effective doublon spectrum turns complex.
pub fn effective_transition(params: &ModelParams, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    spectral::bisect_transition(lo, hi, tol, |h| {
        let model = build_doublon_model(&params.clone().with_non_hermiticity(h)?)?;
        Ok(!spectral::is_real_spectrum(&model.eigenvalues()?, REAL_SPECTRUM_RTOL))
    })
}

/// Largest distance between greedily matched eigenvalues: both lists are
/// sorted by real part and each `reference` value takes its nearest unused
/// partner in `candidates`.
pub fn matched_mismatch(reference: &[Complex64], candidates: &[Complex64]) -> f64 {
    let by_re = |a: &Complex64, b: &Complex64| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im));
    let mut refs = reference.to_vec();
    refs.sort_by(by_re);
    let mut pool = candidates.to_vec();
    pool.sort_by(by_re);
    let mut used = vec![false; pool.len()];
    let mut worst = 0.0f64;
    for r in &refs {
        let best = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, c)| (i, (c - r).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, d)) => {
                used[i] = true;
                worst = worst.max(d);
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsOptions {
    /// Doublon start site for the dynamical check (0-based); defaults to `L/2`.
    pub initial_site: Option<usize>,
    /// Evolution horizon in units of `1/J_e`.
    pub horizon: f64,
    pub samples: usize,
    /// `J/U` and `V e^h / U` above this produce warnings.
    pub max_ratio: f64,
}

impl Default for AsymptoticsOptions {
    fn default() -> Self {
        Self { initial_site: None, horizon: 5.0, samples: 100, max_ratio: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    #[serde(rename = "J_e")]
    pub effective_hopping: f64,
    pub h_c: f64,
    pub h_c_prime: f64,
    #[serde(rename = "U_c")]
    pub u_c: f64,
    /// `J / U`, the small parameter of the expansion.
    pub asymptotic_ratio: f64,
    pub branch_size: usize,
    pub spectral_mismatch: f64,
    pub dynamical_mismatch: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Compares the effective doublon model with the full two-particle model,
/// spectrally (branch eigenvalues vs `U + eig(H_eff)`) and dynamically
/// (diagonal probabilities of an initial doublon up to `t J_e = horizon`).
pub fn validate_asymptotics(params: &ModelParams, opts: &AsymptoticsOptions) -> Result<AsymptoticsReport> {
    let th = thresholds(params)?;
    let model = build_doublon_model(params)?;
    let (j, u) = (params.hopping(), params.interaction());
    let l = params.sites();
    let ratio = j / u;
    let mut warnings = Vec::new();
    if ratio > opts.max_ratio {
        warnings.push(format!("J/U = {ratio:.4} exceeds {}; asymptotics not expected to hold", opts.max_ratio));
    }
    let drive = params.amplitude() * params.non_hermiticity().exp() / u;
    if drive > opts.max_ratio {
        warnings.push(format!("V e^h / U = {drive:.4} exceeds {}; asymptotics not expected to hold", opts.max_ratio));
    }

    let branch = doublon_branch(params)?;
    if branch.len() != l {
        warnings.push(format!("doublon branch has {} states, expected {l}", branch.len()));
    }
    let effective: Vec<Complex64> = model.eigenvalues()?.into_iter().map(|e| e + u).collect();
    let spectral_mismatch = if branch.len() >= l {
        matched_mismatch(&effective, &branch.eigenvalues)
    } else {
        matched_mismatch(&branch.eigenvalues, &effective)
    };

    let site = opts.initial_site.unwrap_or(l / 2);
    if site >= l {
        return Err(Error::IndexOutOfRange { n: site, m: site, sites: l });
    }
    if opts.samples == 0 || !(opts.horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon and samples must be positive".into()));
    }
    let t_end = opts.horizon / model.effective_hopping.abs();
    let times: Vec<f64> = (0..=opts.samples).map(|k| t_end * k as f64 / opts.samples as f64).collect();

    let prop_opts = PropagatorOptions::default();
    let start = dynamics::prepare_pair_state(params, site, site)?;
    let full = Propagator::new(params, &[ExchangeSector::Symmetric], &prop_opts)?.evolve(&start, &times)?;
    if let Some(reason) = &full.fallback {
        warnings.push(format!("full model integrated directly: {reason}"));
    }
    let mut a0 = vec![Complex64::new(0.0, 0.0); l];
    a0[site] = Complex64::new(1.0, 0.0);
    let reduced = dynamics::evolve_dense(&model.matrix, &a0, &times, &prop_opts)?;
    let dynamical_mismatch = full
        .states
        .iter()
        .zip(&reduced)
        .flat_map(|(s, (a, _))| {
            s.diagonal_probabilities().into_iter().zip(a.iter().map(|x| x.norm_sqr())).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max);

    Ok(AsymptoticsReport {
        effective_hopping: model.effective_hopping,
        h_c: th.h_c,
        h_c_prime: th.h_c_prime,
        u_c: th.u_c,
        asymptotic_ratio: ratio,
        branch_size: branch.len(),
        spectral_mismatch,
        dynamical_mismatch,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rational;

    fn params(p: u64, q: u64, u: f64, v: f64, h: f64) -> ModelParams {
        ModelParams::new(1.0, u, v, Rational::new(p, q).unwrap(), 0.0, h).unwrap()
    }

    #[test]
    fn threshold_values() {
        let t = thresholds(&params(34, 55, 10.0, 0.15, 0.0)).unwrap();
        assert!((t.h_c - 2.5903).abs() < 1e-4);
        assert!((t.h_c_prime - 0.2877).abs() < 1e-4);
        assert!((t.u_c - 13.3333).abs() < 1e-4);
        let strong = thresholds(&params(34, 55, 20.0, 0.15, 0.0)).unwrap();
        assert_eq!(strong.h_c_prime, 0.0);
        assert!(thresholds(&params(34, 55, 10.0, 0.0, 0.0)).is_err());
        assert!(thresholds(&params(34, 55, 0.0, 0.15, 0.0)).is_err());
    }

    #[test]
    fn effective_model_structure() {
        let m = build_doublon_model(&params(34, 55, 10.0, 0.15, 0.7)).unwrap();
        assert!((m.effective_hopping - 0.2).abs() < 1e-15);
        assert_eq!(m.matrix[(3, 4)], Complex64::new(0.2, 0.0));
        assert_eq!(m.matrix[(0, 54)], Complex64::new(0.2, 0.0));
        let pot = m.params.potential(3);
        assert!((m.matrix[(3, 3)] - (pot * 2.0 + 0.4)).norm() < 1e-15);
        assert!(build_doublon_model(&params(34, 55, 0.0, 0.15, 0.0)).is_err());
    }

    #[test]
    fn three_site_ring_band() {
        let m = build_doublon_model(&params(1, 3, 10.0, 0.0, 0.0)).unwrap();
        let mut e: Vec<f64> = m.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        e.sort_by(f64::total_cmp);
        for (x, y) in e.iter().zip([0.2, 0.2, 0.8]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hermitian_at_zero_h() {
        let m = build_doublon_model(&params(8, 13, 10.0, 0.15, 0.0)).unwrap();
        for i in 0..13 {
            for j in 0..13 {
                assert!((m.matrix[(i, j)] - m.matrix[(j, i)].conj()).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn greedy_matching() {
        let a = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let b = [Complex64::new(1.1, 0.0), Complex64::new(0.05, 0.0), Complex64::new(5.0, 0.0)];
        assert!((matched_mismatch(&a, &b) - 0.1).abs() < 1e-12);
        assert!(matched_mismatch(&b, &a).is_infinite());
    }

    #[test]
    fn large_u_branch_is_identified() {
        let p = params(8, 13, 30.0, 0.15, 0.5);
        let branch = doublon_branch(&p).unwrap();
        assert_eq!(branch.len(), 13);
        let report = validate_asymptotics(&p, &AsymptoticsOptions::default()).unwrap();
        assert_eq!(report.branch_size, 13);
        assert!(report.spectral_mismatch < 0.01, "{report:?}");
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("J_e").is_some() && json.get("U_c").is_some());
    }
}
