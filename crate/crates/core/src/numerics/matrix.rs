use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 64;

/// Dense symmetric matrix, row-major. Construction symmetrizes, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds `(m + m^T) / 2` from a row-major `dim x dim` buffer.
    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self> {
        check_dim(dim)?;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            out[i * dim + i] = data[i * dim + i];
            for j in (i + 1)..dim {
                let v = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                out[i * dim + j] = v;
                out[j * dim + i] = v;
            }
        }
        Ok(Self { dim, data: out })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            data: vec![0.0; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        let d = diag.len();
        for (i, v) in diag.iter().enumerate() {
            m.data[i * d + i] = *v;
        }
        Ok(m)
    }

    /// `V diag(values) V^T` where the columns of `vectors` are the basis.
    pub fn from_spectrum(vectors: &SquareMatrix, values: &[f64]) -> Result<Self> {
        let d = vectors.dim();
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: values.len(),
            });
        }
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for (k, lam) in values.iter().enumerate() {
                    acc += vectors.get(i, k) * lam * vectors.get(j, k);
                }
                out[i * d + j] = acc;
                out[j * d + i] = acc;
            }
        }
        Ok(Self { dim: d, data: out })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `x^T M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            let mut r = 0.0;
            for (m, xj) in row.iter().zip(x) {
                r += m * xj;
            }
            acc += x[i] * r;
        }
        acc
    }

    pub fn to_square(&self) -> SquareMatrix {
        SquareMatrix {
            dim: self.dim,
            data: self.data.clone(),
        }
    }
}

/// Dense square matrix, row-major, no structure assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        Self { dim: d, data }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        Self { dim: d, data }
    }

    /// `M^T x`, written into `out`.
    pub fn transpose_mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for (i, xi) in x.iter().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * xi;
            }
        }
    }

    /// `M M^T`, symmetrized.
    pub fn gram(&self) -> SymMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.data[i * d + k] * self.data[j * d + k];
                }
                out[i * d + j] = acc;
                out[j * d + i] = acc;
            }
        }
        SymMatrix { dim: d, data: out }
    }

    pub fn is_identity(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidInput(alloc::format!(
            "matrix dimension {dim} outside 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_symmetrizes() {
        let m = SymMatrix::from_row_major(2, &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(SymMatrix::zeros(0).is_err());
        assert!(SymMatrix::zeros(65).is_err());
        assert!(SymMatrix::from_row_major(2, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn quadratic_form_and_gram() {
        let l = SquareMatrix::from_row_major(2, vec![2.0, 0.0, 1.0, 1.0]).unwrap();
        let a = l.gram();
        // L L^T = [[4, 2], [2, 2]]
        assert_eq!(a.as_slice(), &[4.0, 2.0, 2.0, 2.0]);
        assert_eq!(a.quadratic_form(&[1.0, 1.0]), 10.0);
    }
}
