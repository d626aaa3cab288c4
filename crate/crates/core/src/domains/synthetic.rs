use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::policies::{BehaviorFamily, BehaviorPolicy, Environment, TargetPolicy};

/// `Q` in the quadratic domain's mean reward `-(s - a)^T Q (s - a)`.
pub const QUADRATIC_FORM: [[f64; 2]; 2] = [[11.0, 9.0], [9.0, 11.0]];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DomainKind {
    /// Gaussian rewards around a quadratic mean; Gaussian behavior.
    Quadratic { noise_sd: f64 },
    /// Deterministic `-|0.5 s_1 - a_1|` with uniform behavior and optional
    /// dummy action dimensions.
    AbsError { extra_dummy_dims: usize },
    /// Deterministic negative max of four exponential bumps.
    Multimodal,
}

/// One of the simulated evaluation domains.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticDomain {
    pub kind: DomainKind,
}

pub fn make_quadratic() -> SyntheticDomain {
    make_quadratic_with_noise(0.5)
}

/// Quadratic domain with a custom reward noise level.
pub fn make_quadratic_with_noise(noise_sd: f64) -> SyntheticDomain {
    SyntheticDomain {
        kind: DomainKind::Quadratic { noise_sd },
    }
}

pub fn make_abs_error(extra_dummy_dims: usize) -> SyntheticDomain {
    SyntheticDomain {
        kind: DomainKind::AbsError { extra_dummy_dims },
    }
}

pub fn make_multimodal() -> SyntheticDomain {
    SyntheticDomain {
        kind: DomainKind::Multimodal,
    }
}

fn bump(dx: f64, dy: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    let u = (dx - cx) / sx;
    let v = (dy - cy) / sy;
    libm::exp(-(u * u + v * v))
}

impl SyntheticDomain {
    pub fn name(&self) -> &'static str {
        match self.kind {
            DomainKind::Quadratic { .. } => "quadratic",
            DomainKind::AbsError { .. } => "abs-error",
            DomainKind::Multimodal => "multimodal",
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self.kind {
            DomainKind::AbsError { extra_dummy_dims } => {
                (2 + extra_dummy_dims, 2 + extra_dummy_dims)
            }
            _ => (2, 2),
        }
    }

    /// `E[r | s, a]`.
    pub fn mean_reward(&self, s: &[f64], a: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Quadratic { .. } => {
                let (x, y) = (s[0] - a[0], s[1] - a[1]);
                let q = QUADRATIC_FORM;
                -(q[0][0] * x * x + (q[0][1] + q[1][0]) * x * y + q[1][1] * y * y)
            }
            DomainKind::AbsError { .. } => -(0.5 * s[0] - a[0]).abs(),
            DomainKind::Multimodal => {
                let (dx, dy) = (s[0] - a[0], s[1] - a[1]);
                let f1 = bump(dx, dy, 0.5, 0.0, 0.25, 1.0);
                let f2 = bump(dx, dy, -0.5, 0.0, 0.25, 1.0);
                let f3 = bump(dx, dy, 0.0, -0.5, 1.0, 0.25);
                let f4 = bump(dx, dy, 0.0, 0.5, 1.0, 0.25);
                -f1.max(f2).max(f3).max(f4)
            }
        }
    }

    pub fn behavior(&self) -> BehaviorPolicy {
        let (_, da) = self.dims();
        let (family, clip) = match self.kind {
            DomainKind::Quadratic { .. } => (
                BehaviorFamily::IsotropicGaussian {
                    mean_scale: 1.0,
                    mean_offset: vec![0.2; da],
                    sd: 0.5,
                },
                0.1,
            ),
            _ => (
                BehaviorFamily::UniformBox {
                    lo: vec![-1.0; da],
                    hi: vec![1.0; da],
                },
                0.0,
            ),
        };
        BehaviorPolicy::new(family, clip).expect("domain behavior parameters are valid")
    }

    pub fn target(&self) -> TargetPolicy {
        let (_, da) = self.dims();
        match self.kind {
            DomainKind::Quadratic { .. } => TargetPolicy::Affine {
                scale: 1.0,
                offset: vec![0.0; da],
            },
            DomainKind::AbsError { .. } => TargetPolicy::Affine {
                scale: 0.5,
                offset: vec![0.0; da],
            },
            DomainKind::Multimodal => TargetPolicy::Affine {
                scale: 1.0,
                offset: vec![0.5, 0.0],
            },
        }
    }

    /// Closed-form policy value. The mean reward at `(s, pi(s))` is constant
    /// in `s` for every domain here.
    pub fn true_value(&self) -> f64 {
        match self.kind {
            DomainKind::Quadratic { .. } | DomainKind::AbsError { .. } => 0.0,
            DomainKind::Multimodal => -1.0,
        }
    }
}

impl Environment for SyntheticDomain {
    fn state_dim(&self) -> usize {
        self.dims().0
    }

    fn action_dim(&self) -> usize {
        self.dims().1
    }

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for o in out {
            *o = rng.random_range(-1.0..1.0);
        }
    }

    fn sample_reward<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], rng: &mut R) -> f64 {
        let mean = self.mean_reward(s, a);
        match self.kind {
            DomainKind::Quadratic { noise_sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + noise_sd * z
            }
            _ => mean,
        }
    }
}

/// Monte Carlo estimate of the policy value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloValue {
    pub mean: f64,
    pub std_error: f64,
}

/// Averages the conditional mean reward at `(s, pi(s))` over `n_states`
/// sampled states. Independent of the closed-form [`SyntheticDomain::true_value`].
pub fn true_value_mc(domain: &SyntheticDomain, n_states: usize, seed: u64) -> MonteCarloValue {
    let n_states = n_states.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ds, _) = domain.dims();
    let target = domain.target();
    let mut s = vec![0.0; ds];
    let mut values = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        domain.sample_state(&mut rng, &mut s);
        let a = target.act(&s).expect("domain target matches its dims");
        values.push(domain.mean_reward(&s, &a));
    }
    let n = n_states as f64;
    let mean = crate::numerics::pairwise_sum(&values) / n;
    let var = if n_states > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MonteCarloValue {
        mean,
        std_error: libm::sqrt(var / n),
    }
}
