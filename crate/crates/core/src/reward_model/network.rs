//! Dense tanh network with a two-output (mean, log-variance) head, batched
//! forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Bounds on the raw log-variance output, in standardized target units.
pub(crate) const LOGVAR_MIN: f64 = -12.0;
pub(crate) const LOGVAR_MAX: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_in x n_out`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (n_in + n_out) as f64);
        let w = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            n_in,
            n_out,
            w,
            b: vec![0.0; n_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            n_in: self.n_in,
            n_out: self.n_out,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    /// `out = x W + b` for `rows` inputs.
    fn forward(&self, x: &[f64], rows: usize, out: &mut [f64]) {
        let (k_in, n) = (self.n_in, self.n_out);
        for o in out[..rows * n].chunks_exact_mut(n) {
            o.copy_from_slice(&self.b);
        }
        gemm(
            (rows, k_in, n),
            (x, k_in as isize, 1),
            (&self.w, n as isize, 1),
            1.0,
            out,
        );
    }
}

/// `c = a b + beta c` for an `m x k` matrix `a` and a `k x n` matrix `b`,
/// each given with (row, column) strides; `c` is row-major `m x n`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], isize, isize),
    (b, rsb, csb): (&[f64], isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
    };
    assert!(span(m, k, rsa, csa) as usize <= a.len());
    assert!(span(k, n, rsb, csb) as usize <= b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every strided access inside the
    // slices, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Two tanh hidden layers and a linear two-unit output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub(crate) struct Network {
    pub layers: [Dense; 3],
}

/// Scratch buffers reused across batches.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    h1: Vec<f64>,
    h2: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    out: Vec<f64>,
    d_out: Vec<f64>,
    d_h2: Vec<f64>,
    d_h1: Vec<f64>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Dense::glorot(n_in, hidden, rng),
                Dense::glorot(hidden, hidden, rng),
                Dense::glorot(hidden, 2, rng),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: [
                self.layers[0].zeros_like(),
                self.layers[1].zeros_like(),
                self.layers[2].zeros_like(),
            ],
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].n_out
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Deterministic forward pass. Writes `(mean, clamped logvar)` pairs.
    pub fn predict(&self, x: &[f64], rows: usize, ws: &mut Workspace, out: &mut [f64]) {
        let h = self.hidden();
        ws.h1.resize(rows * h, 0.0);
        ws.h2.resize(rows * h, 0.0);
        self.layers[0].forward(x, rows, &mut ws.h1);
        tanh_in_place(&mut ws.h1);
        self.layers[1].forward(&ws.h1, rows, &mut ws.h2);
        tanh_in_place(&mut ws.h2);
        self.layers[2].forward(&ws.h2, rows, out);
        for r in 0..rows {
            out[2 * r + 1] = out[2 * r + 1].clamp(LOGVAR_MIN, LOGVAR_MAX);
        }
    }

    /// One training pass over a batch: forward with inverted dropout, Gaussian
    /// negative log-likelihood (without the `log 2 pi` constant) averaged over
    /// the batch, gradients written into `grad`. Returns the mean loss.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        y: &[f64],
        dropout: f64,
        rng: &mut R,
        ws: &mut Workspace,
        grad: &mut Network,
    ) -> f64 {
        let rows = y.len();
        let h = self.hidden();
        let n_in = self.n_in();
        let keep_scale = if dropout > 0.0 {
            1.0 / (1.0 - dropout)
        } else {
            1.0
        };

        ws.h1.resize(rows * h, 0.0);
        ws.h2.resize(rows * h, 0.0);
        ws.m1.resize(rows * h, 0.0);
        ws.m2.resize(rows * h, 0.0);
        ws.out.resize(rows * 2, 0.0);

        self.layers[0].forward(x, rows, &mut ws.h1);
        tanh_in_place(&mut ws.h1);
        dropout_mask(&mut ws.m1, dropout, keep_scale, rng);
        for (v, m) in ws.h1.iter_mut().zip(&ws.m1) {
            *v *= m;
        }
        self.layers[1].forward(&ws.h1, rows, &mut ws.h2);
        tanh_in_place(&mut ws.h2);
        dropout_mask(&mut ws.m2, dropout, keep_scale, rng);
        for (v, m) in ws.h2.iter_mut().zip(&ws.m2) {
            *v *= m;
        }
        self.layers[2].forward(&ws.h2, rows, &mut ws.out);

        ws.d_out.resize(rows * 2, 0.0);
        let inv_n = 1.0 / rows as f64;
        let mut loss = 0.0;
        for r in 0..rows {
            let mean = ws.out[2 * r];
            let raw = ws.out[2 * r + 1];
            let lv = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
            let prec = libm::exp(-lv);
            let resid = y[r] - mean;
            loss += 0.5 * (lv + resid * resid * prec);
            ws.d_out[2 * r] = -resid * prec * inv_n;
            ws.d_out[2 * r + 1] = if raw == lv {
                0.5 * (1.0 - resid * resid * prec) * inv_n
            } else {
                0.0
            };
        }

        // output layer
        accumulate_weight_grad(&ws.h2, &ws.d_out, rows, h, 2, &mut grad.layers[2]);
        ws.d_h2.resize(rows * h, 0.0);
        back_through(&self.layers[2], &ws.d_out, rows, &mut ws.d_h2);
        // h2 currently holds tanh * mask; recover d(pre-activation)
        for i in 0..rows * h {
            let m = ws.m2[i];
            if m == 0.0 {
                ws.d_h2[i] = 0.0;
            } else {
                let t = ws.h2[i] / m;
                ws.d_h2[i] *= m * (1.0 - t * t);
            }
        }

        accumulate_weight_grad(&ws.h1, &ws.d_h2, rows, h, h, &mut grad.layers[1]);
        ws.d_h1.resize(rows * h, 0.0);
        back_through(&self.layers[1], &ws.d_h2, rows, &mut ws.d_h1);
        for i in 0..rows * h {
            let m = ws.m1[i];
            if m == 0.0 {
                ws.d_h1[i] = 0.0;
            } else {
                let t = ws.h1[i] / m;
                ws.d_h1[i] *= m * (1.0 - t * t);
            }
        }

        accumulate_weight_grad(x, &ws.d_h1, rows, n_in, h, &mut grad.layers[0]);
        loss * inv_n
    }

    /// Gradient of the mean output with respect to the (standardized) input,
    /// by backpropagation through the deterministic network.
    pub fn mean_input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden();
        let mut z1 = vec![0.0; h];
        let mut z2 = vec![0.0; h];
        self.layers[0].forward(x, 1, &mut z1);
        tanh_in_place(&mut z1);
        self.layers[1].forward(&z1, 1, &mut z2);
        tanh_in_place(&mut z2);
        // d mean / d h2
        let w3 = &self.layers[2].w;
        let mut g2: Vec<f64> = (0..h).map(|k| w3[k * 2] * (1.0 - z2[k] * z2[k])).collect();
        let w2 = &self.layers[1].w;
        let mut g1 = vec![0.0; h];
        for (k, g) in g1.iter_mut().enumerate() {
            let row = &w2[k * h..(k + 1) * h];
            *g = row.iter().zip(&g2).map(|(a, b)| a * b).sum::<f64>() * (1.0 - z1[k] * z1[k]);
        }
        let w1 = &self.layers[0].w;
        let n_in = self.n_in();
        let grad = (0..n_in)
            .map(|i| {
                w1[i * h..(i + 1) * h]
                    .iter()
                    .zip(&g1)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        g2.clear();
        grad
    }
}

fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = tanh(*x);
    }
}

/// `tanh` through a single `exp`; absolute error stays within a few ulps of 1.
#[inline]
fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = libm::exp(2.0 * x);
    (e - 1.0) / (e + 1.0)
}

/// Inverted-dropout mask; one random bit per unit for rate 0.5, a uniform
/// draw per unit otherwise.
fn dropout_mask<R: Rng + ?Sized>(mask: &mut [f64], rate: f64, keep_scale: f64, rng: &mut R) {
    if rate <= 0.0 {
        mask.fill(1.0);
        return;
    }
    if rate == 0.5 {
        for chunk in mask.chunks_mut(64) {
            let bits: u64 = rng.random();
            for (i, m) in chunk.iter_mut().enumerate() {
                *m = if (bits >> i) & 1 == 1 {
                    keep_scale
                } else {
                    0.0
                };
            }
        }
    } else {
        for m in mask.iter_mut() {
            let u: f64 = rng.random();
            *m = if u >= rate { keep_scale } else { 0.0 };
        }
    }
}

/// `grad.w = a^T d`, `grad.b = column sums of d` (overwrites).
fn accumulate_weight_grad(
    a: &[f64],
    d: &[f64],
    rows: usize,
    k_in: usize,
    n: usize,
    grad: &mut Dense,
) {
    grad.b.fill(0.0);
    for dr in d[..rows * n].chunks_exact(n) {
        for (bj, dj) in grad.b.iter_mut().zip(dr) {
            *bj += dj;
        }
    }
    gemm(
        (k_in, rows, n),
        (a, 1, k_in as isize),
        (d, n as isize, 1),
        0.0,
        &mut grad.w,
    );
}

/// `out = d W^T`.
fn back_through(layer: &Dense, d: &[f64], rows: usize, out: &mut [f64]) {
    let (k_in, n) = (layer.n_in, layer.n_out);
    gemm(
        (rows, n, k_in),
        (d, n as isize, 1),
        (&layer.w, 1, n as isize),
        0.0,
        out,
    );
}
