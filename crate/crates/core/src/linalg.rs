//! Dense helpers shared by the frequency-domain code.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a real square matrix, via balancing and the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenFailure(n));
    }
    let balanced = balance(a);
    let iters = 200 * n.max(10);
    // The QR iteration occasionally stalls at the tightest deflation threshold;
    // retry on similar matrices and with a slightly looser threshold.
    let attempts = [
        (&balanced, f64::EPSILON),
        (a, f64::EPSILON),
        (&balanced, 8.0 * f64::EPSILON),
    ];
    for (m, eps) in attempts {
        if let Some(schur) = Schur::try_new(m.clone(), eps, iters) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Schur::try_new(balanced.transpose(), 8.0 * f64::EPSILON, 4 * iters)
        .map(|s| s.complex_eigenvalues().iter().copied().collect())
        .ok_or(Error::EigenFailure(n))
}

/// Diagonal similarity scaling by powers of two (Parlett-Reinsch) so that
/// row and column norms are comparable. Eigenvalues are unchanged.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let radix = 2.0f64;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= radix * radix;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= radix * radix;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
    m
}

pub fn spectral_abscissa_of(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Singular values in descending order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

pub fn sigma_max(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn sigma_max_real(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

/// Left singular vectors and singular values, descending.
pub fn left_singular(m: &CMatrix) -> (CMatrix, Vec<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    (u, svd.singular_values.iter().copied().collect())
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Relative gap `|a - b| / max(|b|, floor)` in the entrywise max norm.
pub fn rel_gap(a: &CMatrix, b: &CMatrix, floor: f64) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balancing_preserves_eigenvalues() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-4, 3.0]);
        let b = balance(&a);
        let tr_a: f64 = a.trace();
        let tr_b: f64 = b.trace();
        assert!((tr_a - tr_b).abs() < 1e-12);
        let ea = eigenvalues(&a).unwrap();
        let mut re: Vec<f64> = ea.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let det = a.determinant();
        let prod: f64 = ea.iter().fold(Complex64::new(1.0, 0.0), |p, z| p * z).re;
        assert!((det - prod).abs() < 1e-6 * det.abs().max(1.0));
    }

    #[test]
    fn eigenvalues_of_rotation_are_imaginary() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let mut e = eigenvalues(&a).unwrap();
        e.sort_by(|x, y| x.im.total_cmp(&y.im));
        assert!(e[0].re.abs() < 1e-14 && (e[0].im + 2.0).abs() < 1e-14);
        assert!((e[1].im - 2.0).abs() < 1e-14);
    }

    #[test]
    fn stacking() {
        let a = DMatrix::from_element(1, 2, 1.0);
        let b = DMatrix::from_element(2, 2, 2.0);
        let v = vstack(&[&a, &b]);
        assert_eq!(v.shape(), (3, 2));
        assert_eq!(v[(2, 1)], 2.0);
        let h = hstack(&[&b, &b.transpose()]);
        assert_eq!(h.shape(), (2, 4));
    }
}
