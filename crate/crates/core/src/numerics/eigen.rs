use alloc::vec::Vec;

use super::{SquareMatrix, SymMatrix};
use crate::{Error, Result};

/// Eigenvalues smaller than this fraction of the spectral radius count as zero.
pub const DEFAULT_ZERO_TOL_REL: f64 = 1e-8;

const SWEEP_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100;

/// Spectrum of a symmetric matrix with eigenvalues sorted in descending order
/// and the matching eigenvectors stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: SquareMatrix,
    pub positive_count: usize,
    pub negative_count: usize,
    pub zero_count: usize,
    /// Absolute threshold that was used for the sign classification.
    pub zero_threshold: f64,
}

/// Sign class of one eigenvalue after zero-tolerance classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn sign(&self, k: usize) -> Sign {
        let v = self.eigenvalues[k];
        if v.abs() < self.zero_threshold || v == 0.0 {
            Sign::Zero
        } else if v > 0.0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_spectrum(&self.eigenvectors, &self.eigenvalues)
            .expect("decomposition dimensions are consistent")
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(m: &SymMatrix, zero_tol_rel: f64) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if !(zero_tol_rel > 0.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "zero tolerance must be positive, got {zero_tol_rel}"
        )));
    }
    let d = m.dim();
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let mut v = SquareMatrix::identity(d)?;
    let scale = m.max_abs();
    let tol = SWEEP_TOL * scale;

    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let mut off = 0.0f64;
            for p in 0..d {
                for q in (p + 1)..d {
                    off = off.max(a[p * d + q].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * d + p];
                    let aqq = a[q * d + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta.is_infinite() {
                        0.5 / theta
                    } else {
                        let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                        sgn / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                    };
                    let c = 1.0 / libm::sqrt(t * t + 1.0);
                    let s = t * c;

                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                    a[p * d + q] = 0.0;
                    a[q * d + p] = 0.0;

                    for k in 0..d {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * d + i]).collect();
    let mut vectors = SquareMatrix::identity(d)?;
    for (col, &src) in order.iter().enumerate() {
        for row in 0..d {
            vectors.set(row, col, v.get(row, src));
        }
    }

    let max_abs = eigenvalues.iter().fold(0.0, |m, x| f64::max(m, x.abs()));
    let zero_threshold = zero_tol_rel * max_abs;
    let mut out = EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
        positive_count: 0,
        negative_count: 0,
        zero_count: 0,
        zero_threshold,
    };
    for k in 0..d {
        match out.sign(k) {
            Sign::Positive => out.positive_count += 1,
            Sign::Negative => out.negative_count += 1,
            Sign::Zero => out.zero_count += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
    }

    #[test]
    fn diagonal_input_is_already_decomposed() {
        let m = SymMatrix::from_diagonal(&[3.0, 1.0]).unwrap();
        let e = sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert!(e.eigenvectors.is_identity());
        assert_eq!(
            (e.positive_count, e.negative_count, e.zero_count),
            (2, 0, 0)
        );
    }

    #[test]
    fn swap_matrix() {
        let m = SymMatrix::from_row_major(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap();
        assert!(max_abs_diff(&e.eigenvalues, &[1.0, -1.0]) < 1e-15);
        let r = core::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.eigenvectors.column(0);
        let v1 = e.eigenvectors.column(1);
        // up to sign
        assert!((v0[0] * v0[1] - r * r).abs() < 1e-15);
        assert!((v1[0] * v1[1] + r * r).abs() < 1e-15);
        assert_eq!(
            (e.positive_count, e.negative_count, e.zero_count),
            (1, 1, 0)
        );
    }

    #[test]
    fn zero_matrix_is_all_zero() {
        let m = SymMatrix::zeros(2).unwrap();
        let e = sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0, 0.0]);
        assert_eq!(
            (e.positive_count, e.negative_count, e.zero_count),
            (0, 0, 2)
        );
    }

    #[test]
    fn tiny_eigenvalues_are_classified_zero() {
        let m = SymMatrix::from_diagonal(&[1.0, 1e-12, -2.0]).unwrap();
        let e = sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap();
        assert_eq!(
            (e.positive_count, e.negative_count, e.zero_count),
            (1, 1, 1)
        );
    }

    #[test]
    fn rejects_non_finite_and_bad_tolerance() {
        let m = SymMatrix::from_diagonal(&[f64::NAN, 1.0]).unwrap();
        assert!(matches!(sym_eig(&m, 1e-8), Err(Error::InvalidInput(_))));
        let m = SymMatrix::identity(2).unwrap();
        assert!(sym_eig(&m, 0.0).is_err());
    }
}
