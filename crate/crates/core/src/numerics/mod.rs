//! Small dense linear algebra and probability primitives.

mod eigen;
mod kernel;
mod matrix;
mod normal;

pub use eigen::{sym_eig, EigenDecomposition, Sign, DEFAULT_ZERO_TOL_REL};
pub use kernel::{gaussian_kernel, gaussian_kernel_from_sq_norm, kernel_roughness};
pub use matrix::{SquareMatrix, SymMatrix, MAX_DIM};
pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_sf, TruncatedNormal};

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how the caller scheduled the work that produced them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
