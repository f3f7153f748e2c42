//! Single-particle and two-particle Hamiltonians.
//!
//! The two-particle problem is a single particle hopping on an `L x L`
//! periodic square lattice with on-site energy `V_n + V_m` and an extra
//! `U` on the diagonal `n = m`. Besides the dense `L^2 x L^2` matrix this
//! module offers a matrix-free apply and the exchange-symmetric /
//! antisymmetric blocks, which the spectral and topology code use.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::ModelParams;

/// Largest ring for which the dense two-particle matrix is materialized
/// (`89^2 = 7921` rows).
pub const DENSE_SITE_CAP: usize = 89;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Debug)]
pub struct SingleParticleHamiltonian {
    pub matrix: CMatrix,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct TwoParticleHamiltonian {
    pub matrix: CMatrix,
    pub params: ModelParams,
}

/// `-J (psi_{n+1} + psi_{n-1}) + V_n psi_n` on the ring.
pub fn build_h1(params: &ModelParams) -> SingleParticleHamiltonian {
    SingleParticleHamiltonian { matrix: h1_at_phase(params, params.phase()), params: params.clone() }
}

/// Single-particle matrix with the real potential phase replaced by `phase`.
pub fn h1_at_phase(params: &ModelParams, phase: f64) -> CMatrix {
    let size = params.sites();
    let hop = Complex64::new(-params.hopping(), 0.0);
    let potentials = params.potentials_at_phase(phase);
    let mut h = Mat::<Complex64>::zeros(size, size);
    for n in 0..size {
        h[(n, n)] += potentials[n];
        h[(n, params.wrap(n, 1))] += hop;
        h[(n, params.wrap(n, -1))] += hop;
    }
    h
}

/// Matrix-free two-particle operator with precomputed on-site energies.
#[derive(Clone, Debug)]
pub struct PairOperator {
    sites: usize,
    hopping: f64,
    interaction: f64,
    potentials: Vec<Complex64>,
}

impl PairOperator {
    pub fn new(params: &ModelParams) -> Self {
        Self::at_phase(params, params.phase())
    }

    pub fn at_phase(params: &ModelParams, phase: f64) -> Self {
        Self {
            sites: params.sites(),
            hopping: params.hopping(),
            interaction: params.interaction(),
            potentials: params.potentials_at_phase(phase),
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.sites * self.sites
    }

    fn diagonal(&self, n: usize, m: usize) -> Complex64 {
        let mut d = self.potentials[n] + self.potentials[m];
        if n == m {
            d += self.interaction;
        }
        d
    }

    /// `out = H2 x`.
    ///
    /// The neighbour sum is grouped as `(m-neighbours) + (n-neighbours)` so
    /// that an exchange-symmetric `x` yields a bit-for-bit symmetric `out`.
    pub fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
        }
        if out.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: out.len() });
        }
        let size = self.sites;
        for n in 0..size {
            let np = if n + 1 == size { 0 } else { n + 1 };
            let nm = if n == 0 { size - 1 } else { n - 1 };
            for m in 0..size {
                let mp = if m + 1 == size { 0 } else { m + 1 };
                let mm = if m == 0 { size - 1 } else { m - 1 };
                let along_m = x[n * size + mp] + x[n * size + mm];
                let along_n = x[np * size + m] + x[nm * size + m];
                out[n * size + m] = -self.hopping * (along_m + along_n) + self.diagonal(n, m) * x[n * size + m];
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = vec![ZERO; self.dim()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Nonzero entries `(row, col, value)` of `H2` acting on basis state `(n, m)`.
    fn column_entries(&self, n: usize, m: usize, mut emit: impl FnMut(usize, usize, Complex64)) {
        let size = self.sites;
        let hop = Complex64::new(-self.hopping, 0.0);
        let up = |l: usize| if l + 1 == size { 0 } else { l + 1 };
        let down = |l: usize| if l == 0 { size - 1 } else { l - 1 };
        emit(n, m, self.diagonal(n, m));
        emit(n, up(m), hop);
        emit(n, down(m), hop);
        emit(up(n), m, hop);
        emit(down(n), m, hop);
    }

    pub fn dense(&self) -> Result<CMatrix> {
        if self.sites > DENSE_SITE_CAP {
            return Err(Error::DenseSizeCap { sites: self.sites, cap: DENSE_SITE_CAP });
        }
        let size = self.sites;
        let mut h = Mat::<Complex64>::zeros(self.dim(), self.dim());
        for n in 0..size {
            for m in 0..size {
                let col = n * size + m;
                self.column_entries(n, m, |a, b, v| h[(a * size + b, col)] += v);
            }
        }
        Ok(h)
    }

    /// Block of `H2` restricted to one exchange sector, in the basis of
    /// [`SectorBasis`].
    pub fn sector_matrix(&self, basis: &SectorBasis) -> CMatrix {
        let dim = basis.len();
        let mut h = Mat::<Complex64>::zeros(dim, dim);
        for (j, &(n, m)) in basis.pairs.iter().enumerate() {
            for (a, b, w) in basis.components(n, m) {
                self.column_entries(a, b, |r, s, v| {
                    if let Some((i, coeff)) = basis.overlap(r, s) {
                        h[(i, j)] += v * (w * coeff);
                    }
                });
            }
        }
        h
    }
}

/// Builds the dense `L^2 x L^2` two-particle matrix (row-major pairing).
pub fn build_h2(params: &ModelParams) -> Result<TwoParticleHamiltonian> {
    Ok(TwoParticleHamiltonian { matrix: PairOperator::new(params).dense()?, params: params.clone() })
}

/// `H2 x` without materializing `H2`.
pub fn apply_h2(params: &ModelParams, x: &[Complex64]) -> Result<Vec<Complex64>> {
    PairOperator::new(params).apply(x)
}

/// Parity under particle exchange `(n, m) -> (m, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExchangeSector {
    Symmetric,
    Antisymmetric,
}

impl ExchangeSector {
    pub const BOTH: [ExchangeSector; 2] = [ExchangeSector::Symmetric, ExchangeSector::Antisymmetric];
}

/// Orthonormal basis of one exchange sector.
///
/// Symmetric: `|n,n>` and `(|n,m> + |m,n>)/sqrt 2` for `n < m`.
/// Antisymmetric: `(|n,m> - |m,n>)/sqrt 2` for `n < m`.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    sector: ExchangeSector,
    sites: usize,
    pairs: Vec<(usize, usize)>,
    // index into `pairs` for n <= m, row-major over the upper triangle
    lookup: Vec<usize>,
}

impl SectorBasis {
    pub fn new(sites: usize, sector: ExchangeSector) -> Self {
        let mut pairs = Vec::new();
        let mut lookup = vec![usize::MAX; sites * sites];
        for n in 0..sites {
            let start = match sector {
                ExchangeSector::Symmetric => n,
                ExchangeSector::Antisymmetric => n + 1,
            };
            for m in start..sites {
                lookup[n * sites + m] = pairs.len();
                pairs.push((n, m));
            }
        }
        Self { sector, sites, pairs, lookup }
    }

    pub fn sector(&self) -> ExchangeSector {
        self.sector
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Full-space components `(n, m, weight)` of the basis state labelled by `n <= m`.
    fn components(&self, n: usize, m: usize) -> Vec<(usize, usize, f64)> {
        match (self.sector, n == m) {
            (ExchangeSector::Symmetric, true) => vec![(n, n, 1.0)],
            (ExchangeSector::Symmetric, false) => vec![(n, m, FRAC_1_SQRT_2), (m, n, FRAC_1_SQRT_2)],
            (ExchangeSector::Antisymmetric, _) => vec![(n, m, FRAC_1_SQRT_2), (m, n, -FRAC_1_SQRT_2)],
        }
    }

    /// `(i, <basis_i | n, m>)` for the unique basis state overlapping `|n, m>`.
    fn overlap(&self, n: usize, m: usize) -> Option<(usize, f64)> {
        let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
        match self.sector {
            ExchangeSector::Symmetric => {
                let i = self.lookup[lo * self.sites + hi];
                Some((i, if n == m { 1.0 } else { FRAC_1_SQRT_2 }))
            }
            ExchangeSector::Antisymmetric => {
                if n == m {
                    None
                } else {
                    let i = self.lookup[lo * self.sites + hi];
                    Some((i, if n < m { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 }))
                }
            }
        }
    }

    /// Sector coefficients of a full `L^2` vector (orthogonal projection).
    pub fn project(&self, full: &[Complex64]) -> Vec<Complex64> {
        let size = self.sites;
        self.pairs
            .iter()
            .map(|&(n, m)| self.components(n, m).into_iter().map(|(a, b, w)| full[a * size + b] * w).sum())
            .collect()
    }

    /// Adds the full-space vector of `coeffs` into `full`.
    pub fn embed_into(&self, coeffs: &[Complex64], full: &mut [Complex64]) {
        let size = self.sites;
        for (&(n, m), &c) in self.pairs.iter().zip(coeffs) {
            for (a, b, w) in self.components(n, m) {
                full[a * size + b] += c * w;
            }
        }
    }

    /// Sum of `|psi_{n,m}|^4` over the full-space vector of `coeffs`.
    pub fn fourth_moment(&self, coeffs: impl Iterator<Item = Complex64>) -> f64 {
        coeffs
            .zip(&self.pairs)
            .map(|(c, &(n, m))| {
                let p = c.norm_sqr();
                if n == m {
                    p * p
                } else {
                    // two entries of magnitude^2 p/2
                    p * p / 2.0
                }
            })
            .sum()
    }

    /// Sum of `|psi_{n,n}|^2` (doublon weight) of the full vector of `coeffs`.
    pub fn diagonal_weight(&self, coeffs: impl Iterator<Item = Complex64>) -> f64 {
        coeffs.zip(&self.pairs).filter(|(_, &(n, m))| n == m).map(|(c, _)| c.norm_sqr()).sum()
    }
}

/// Writes the nonzero entries of `matrix` as `row col re im` lines.
pub fn write_triplets<W: Write>(matrix: &CMatrix, mut out: W) -> Result<()> {
    writeln!(out, "# rows={} cols={}", matrix.nrows(), matrix.ncols())?;
    for j in 0..matrix.ncols() {
        for i in 0..matrix.nrows() {
            let v = matrix[(i, j)];
            if v != ZERO {
                writeln!(out, "{i} {j} {} {}", v.re, v.im)?;
            }
        }
    }
    Ok(())
}
