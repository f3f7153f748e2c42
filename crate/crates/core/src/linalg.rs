//! Thin layer over `faer`: dense complex matrices, overflow-free
//! log-determinants, a 1-norm condition estimator and the general
//! eigensolver.

use std::f64::consts::{PI, TAU};

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::Solve;
use faer::{Mat, MatRef};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = Mat<Complex64>;

/// Maps an angle onto `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// `log det A = log_abs + i * phase`, with `phase` in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    pub phase: f64,
}

impl LogDet {
    /// Log-determinant of a block-diagonal product.
    pub fn combine(self, other: LogDet) -> LogDet {
        LogDet { log_abs: self.log_abs + other.log_abs, phase: wrap_phase(self.phase + other.phase) }
    }

    pub fn conj(self) -> LogDet {
        LogDet { log_abs: self.log_abs, phase: wrap_phase(-self.phase) }
    }
}

fn permutation_is_odd(forward: &[usize]) -> bool {
    let mut seen = vec![false; forward.len()];
    let mut transpositions = 0usize;
    for start in 0..forward.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = forward[i];
            len += 1;
        }
        transpositions += len - 1;
    }
    transpositions % 2 == 1
}

/// Log-determinant from an LU factorization with partial pivoting.
///
/// Magnitudes are summed as logarithms and phases as angles, so the result is
/// finite even when `|det A|` is far outside the `f64` range.
pub fn log_det_from_lu(lu: &PartialPivLu<Complex64>) -> LogDet {
    let u = lu.U();
    let mut log_abs = 0.0;
    let mut phase = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        log_abs += d.norm().ln();
        phase += d.arg();
    }
    if permutation_is_odd(lu.P().arrays().0) {
        phase += PI;
    }
    LogDet { log_abs, phase: wrap_phase(phase) }
}

pub fn log_det(a: MatRef<'_, Complex64>) -> LogDet {
    log_det_from_lu(&a.partial_piv_lu())
}

pub fn one_norm(a: MatRef<'_, Complex64>) -> f64 {
    (0..a.ncols()).map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn lu_is_singular(lu: &PartialPivLu<Complex64>) -> bool {
    let u = lu.U();
    (0..u.nrows()).any(|i| {
        let d = u[(i, i)];
        d == Complex64::new(0.0, 0.0) || !d.norm().is_finite()
    })
}

/// Hager–Higham estimate of `||A^{-1}||_1` from an existing factorization.
/// Returns infinity for an exactly singular factor.
pub fn inverse_one_norm_estimate(lu: &PartialPivLu<Complex64>) -> f64 {
    if lu_is_singular(lu) {
        return f64::INFINITY;
    }
    let n = lu.U().nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = Mat::<Complex64>::from_fn(n, 1, |_, _| Complex64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = lu.solve(&x);
        let norm_y: f64 = (0..n).map(|i| y[(i, 0)].norm()).sum();
        if !norm_y.is_finite() {
            return f64::INFINITY;
        }
        if norm_y <= estimate {
            break;
        }
        estimate = norm_y;
        let sign = Mat::<Complex64>::from_fn(n, 1, |i, _| {
            let v = y[(i, 0)];
            let r = v.norm();
            if r == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                v / r
            }
        });
        let mut z = sign;
        lu.solve_adjoint_in_place(&mut z);
        let (j, zmax) =
            (0..n)
                .map(|i| (i, z[(i, 0)].norm()))
                .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = (0..n).map(|i| (z[(i, 0)].conj() * x[(i, 0)]).re).sum();
        if zmax <= ztx || j == last_j {
            break;
        }
        last_j = j;
        x = Mat::zeros(n, 1);
        x[(j, 0)] = Complex64::new(1.0, 0.0);
    }
    estimate
}

/// `||A||_1 * est(||A^{-1}||_1)`.
pub fn condition_estimate(a: MatRef<'_, Complex64>) -> f64 {
    let lu = a.partial_piv_lu();
    one_norm(a) * inverse_one_norm_estimate(&lu)
}

/// Right eigenpairs of a general complex matrix. Eigenvector columns are
/// scaled to unit Euclidean norm.
pub fn eigen(a: MatRef<'_, Complex64>, want_vectors: bool) -> Result<(Vec<Complex64>, Option<CMatrix>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch { expected: n, actual: a.ncols() });
    }
    if (0..n).any(|j| (0..n).any(|i| !a[(i, j)].re.is_finite() || !a[(i, j)].im.is_finite())) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    let failed = |_| Error::EigenNoConvergence { first: 0, end: n };
    if !want_vectors {
        return Ok((a.eigenvalues().map_err(failed)?, None));
    }
    let evd = a.eigen().map_err(failed)?;
    let values: Vec<Complex64> = evd.S().column_vector().iter().copied().collect();
    let mut vectors = evd.U().to_owned();
    for j in 0..n {
        let norm = (0..n).map(|i| vectors[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                vectors[(i, j)] /= norm;
            }
        }
    }
    Ok((values, Some(vectors)))
}

pub fn matvec(a: MatRef<'_, Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.nrows()];
    for (j, &xj) in x.iter().enumerate().take(a.ncols()) {
        if xj == Complex64::new(0.0, 0.0) {
            continue;
        }
        let col = a.col(j);
        for (o, v) in out.iter_mut().zip(col.iter()) {
            *o += v * xj;
        }
    }
    out
}

pub fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_phase(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn log_det_matches_small_determinant() {
        // det = (1+2i)(4) - (3)(-i) = 4 + 11i, with a pivoting row swap
        let a = Mat::from_fn(2, 2, |i, j| [[c(1.0, 2.0), c(3.0, 0.0)], [c(0.0, -1.0), c(4.0, 0.0)]][i][j]);
        let ld = log_det(a.as_ref());
        let det = c(4.0, 11.0);
        assert!((ld.log_abs - det.norm().ln()).abs() < 1e-13);
        assert!((ld.phase - det.arg()).abs() < 1e-13);

        let swap = Mat::from_fn(2, 2, |i, j| if i != j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let ld = log_det(swap.as_ref());
        assert!(ld.log_abs.abs() < 1e-15);
        assert!((ld.phase.abs() - PI).abs() < 1e-15);
    }

    #[test]
    fn log_det_survives_overflow() {
        // det = 1e6^400 overflows f64 by far
        let n = 400;
        let a = Mat::from_fn(n, n, |i, j| {
            if i == j {
                c(0.0, 1e6)
            } else if j == i + 1 {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let ld = log_det(a.as_ref());
        assert!(ld.log_abs.is_finite());
        assert!((ld.log_abs - n as f64 * 1e6f64.ln()).abs() < 1e-8);
        // i^400 = 1
        assert!(ld.phase.abs() < 1e-9);
    }

    #[test]
    fn condition_of_identity_and_singular() {
        let eye = Mat::<Complex64>::from_fn(5, 5, |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!((condition_estimate(eye.as_ref()) - 1.0).abs() < 1e-12);
        let jordan = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 1 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert!(condition_estimate(jordan.as_ref()).is_infinite());
    }

    #[test]
    fn condition_estimate_is_exact_for_diagonal() {
        let d = Mat::<Complex64>::from_fn(4, 4, |i, j| if i == j { c(10f64.powi(i as i32), 0.0) } else { c(0.0, 0.0) });
        let k = condition_estimate(d.as_ref());
        assert!((k - 1000.0).abs() < 1e-9, "{k}");
    }

    #[test]
    fn eigen_vectors_are_unit_and_satisfy_residual() {
        let a = Mat::from_fn(6, 6, |i, j| c(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i + 2 * j) % 3) as f64 - 1.0));
        let (vals, vecs) = eigen(a.as_ref(), true).unwrap();
        let vecs = vecs.unwrap();
        for k in 0..6 {
            let v: Vec<Complex64> = (0..6).map(|i| vecs[(i, k)]).collect();
            assert!((norm2(&v) - 1.0).abs() < 1e-12);
            let av = matvec(a.as_ref(), &v);
            let r: f64 = av.iter().zip(&v).map(|(x, y)| (x - vals[k] * y).norm_sqr()).sum::<f64>().sqrt();
            assert!(r < 1e-10, "{r}");
        }
    }
}
