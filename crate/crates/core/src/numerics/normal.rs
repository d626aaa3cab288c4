use core::f64::consts::{PI, SQRT_2};

use rand::Rng;

use crate::{Error, Result};

pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Standard normal CDF via the fdlibm `erfc` rational approximations.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse standard normal CDF. Acklam's rational approximation followed by
/// one Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    let e = normal_cdf(x) - p;
    let u = e * libm::sqrt(2.0 * PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Normal distribution restricted to `[lo, hi]` and renormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    mass: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "truncated normal needs finite mean and sd > 0, got ({mean}, {sd})"
            )));
        }
        if !(lo < hi) {
            return Err(Error::InvalidInput(alloc::format!(
                "truncation bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let mass = std_mass((lo - mean) / sd, (hi - mean) / sd);
        if !(mass > 1e-300) || !mass.is_finite() {
            return Err(Error::DegenerateTruncation { lo, hi });
        }
        Ok(Self {
            mean,
            sd,
            lo,
            hi,
            mass,
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        normal_pdf((x - self.mean) / self.sd) / (self.sd * self.mass)
    }

    /// Probability of `[a, b]` under the truncated law.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if !(a < b) {
            return 0.0;
        }
        std_mass((a - self.mean) / self.sd, (b - self.mean) / self.sd) / self.mass
    }

    /// Inverse-CDF draw on the truncated interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let alpha = (self.lo - self.mean) / self.sd;
        let beta = (self.hi - self.mean) / self.sd;
        let z = if alpha > 0.0 {
            // work in the upper tail to keep precision
            let p = normal_sf(alpha) - u * (normal_sf(alpha) - normal_sf(beta));
            -normal_quantile(p)
        } else {
            let p = normal_cdf(alpha) + u * (normal_cdf(beta) - normal_cdf(alpha));
            normal_quantile(p)
        };
        (self.mean + self.sd * z).clamp(self.lo, self.hi)
    }
}

fn std_mass(alpha: f64, beta: f64) -> f64 {
    if alpha > 0.0 {
        normal_sf(alpha) - normal_sf(beta)
    } else {
        normal_cdf(beta) - normal_cdf(alpha)
    }
}
