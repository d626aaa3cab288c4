use core::f64::consts::PI;

/// Standard multivariate Gaussian density `(2 pi)^(-d/2) exp(-|u|^2 / 2)`.
pub fn gaussian_kernel(u: &[f64]) -> f64 {
    let sq: f64 = u.iter().map(|x| x * x).sum();
    gaussian_kernel_from_sq_norm(sq, u.len())
}

/// Same kernel evaluated from a precomputed squared norm.
#[inline]
pub fn gaussian_kernel_from_sq_norm(sq_norm: f64, dim: usize) -> f64 {
    libm::exp(-0.5 * sq_norm - 0.5 * dim as f64 * libm::log(2.0 * PI))
}

/// `R(K) = int K(u)^2 du = (4 pi)^(-d/2)` for the Gaussian kernel.
pub fn kernel_roughness(dim: usize) -> f64 {
    libm::pow(4.0 * PI, -(dim as f64) / 2.0)
}
