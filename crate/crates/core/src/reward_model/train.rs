use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Network, Workspace};
use super::{FitReport, RewardConfig, RewardModel, Standardizer};
use crate::policies::LoggedDataset;
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Network,
    v: Network,
    t: i32,
}

impl Adam {
    fn new(like: &Network) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Network, grad: &Network, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, self.t as f64);
        let step = lr * libm::sqrt(c2) / c1;
        for (((p, g), m), v) in params
            .params_mut()
            .zip(grad.params())
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= step * *m / (libm::sqrt(*v) + ADAM_EPS);
        }
    }
}

/// Mean Gaussian NLL (reward units, including the `log 2 pi` term) of `net`
/// on standardized inputs `x` and standardized targets `y`.
fn validation_nll(
    net: &Network,
    x: &[f64],
    y: &[f64],
    target_scale: f64,
    ws: &mut Workspace,
) -> f64 {
    const CHUNK: usize = 1024;
    let width = net.n_in();
    let mut out = vec![0.0; CHUNK * 2];
    let mut total = 0.0;
    let mut start = 0;
    while start < y.len() {
        let end = (start + CHUNK).min(y.len());
        let rows = end - start;
        net.predict(
            &x[start * width..end * width],
            rows,
            ws,
            &mut out[..rows * 2],
        );
        for r in 0..rows {
            let (m, lv) = (out[2 * r], out[2 * r + 1]);
            let resid = y[start + r] - m;
            total += 0.5 * (lv + resid * resid * libm::exp(-lv));
        }
        start = end;
    }
    total / y.len() as f64 + 0.5 * libm::log(2.0 * PI) + libm::log(target_scale)
}

fn shuffled_rows(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn validation_len(n: usize, fraction: f64) -> usize {
    (libm::round(n as f64 * fraction) as usize).clamp(1, n - 1)
}

/// Row indices that [`fit`] holds out for validation with this `seed`.
pub fn validation_rows(n: usize, config: &RewardConfig, seed: u64) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = shuffled_rows(n, &mut rng);
    order.truncate(validation_len(n, config.validation_fraction));
    order
}

/// Fits the reward regressor by mini-batch Adam on the Gaussian negative
/// log-likelihood, holding out a validation split for early stopping. The
/// returned model carries the weights with the lowest validation NLL.
pub fn fit(
    data: &LoggedDataset,
    config: &RewardConfig,
    seed: u64,
) -> Result<(RewardModel, FitReport)> {
    config.validate()?;
    let n = data.len();
    if n < 10 {
        return Err(Error::InvalidInput(alloc::format!(
            "reward model needs at least 10 records, got {n}"
        )));
    }
    let (ds, da) = (data.state_dim(), data.action_dim());
    let width = ds + da;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let order = shuffled_rows(n, &mut rng);
    let (val_idx, train_idx) = order.split_at(validation_len(n, config.validation_fraction));

    let inputs: Vec<Standardizer> = (0..width)
        .map(|k| {
            Standardizer::fit(train_idx.iter().map(|&i| {
                if k < ds {
                    data.state(i)[k]
                } else {
                    data.action(i)[k - ds]
                }
            }))
        })
        .collect();
    let target = Standardizer::fit(train_idx.iter().map(|&i| data.rewards()[i]));

    let encode = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * width);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            for (k, v) in data.state(i).iter().chain(data.action(i)).enumerate() {
                x.push(inputs[k].apply(*v));
            }
            y.push(target.apply(data.rewards()[i]));
        }
        (x, y)
    };
    let (x_train, y_train) = encode(train_idx);
    let (x_val, y_val) = encode(val_idx);

    let mut net = Network::new(width, config.hidden, &mut rng);
    let mut grad = net.zeros_like();
    let mut adam = Adam::new(&net);
    let mut ws = Workspace::default();

    let initial = validation_nll(&net, &x_val, &y_val, target.scale, &mut ws);
    if !initial.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    let mut best = initial;
    let mut best_net = net.clone();
    let mut best_epoch = 0;
    let mut epochs_run = 0;

    let n_train = y_train.len();
    let bs = config.batch_size.min(n_train);
    let mut perm: Vec<usize> = (0..n_train).collect();
    let mut xb = vec![0.0; bs * width];
    let mut yb = vec![0.0; bs];

    for epoch in 1..=config.max_epochs {
        perm.shuffle(&mut rng);
        for batch in perm.chunks(bs) {
            let rows = batch.len();
            for (r, &i) in batch.iter().enumerate() {
                xb[r * width..(r + 1) * width]
                    .copy_from_slice(&x_train[i * width..(i + 1) * width]);
                yb[r] = y_train[i];
            }
            let loss = net.loss_and_grad(
                &xb[..rows * width],
                &yb[..rows],
                config.dropout,
                &mut rng,
                &mut ws,
                &mut grad,
            );
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            if config.l2 > 0.0 {
                for layer in 0..2 {
                    let (g, p) = (&mut grad.layers[layer].w, &net.layers[layer].w);
                    for (gi, pi) in g.iter_mut().zip(p) {
                        *gi += 2.0 * config.l2 * pi;
                    }
                }
            }
            adam.step(&mut net, &grad, config.learning_rate);
        }
        epochs_run = epoch;
        let nll = validation_nll(&net, &x_val, &y_val, target.scale, &mut ws);
        if !nll.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if nll < best {
            best = nll;
            best_net = net.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let model = RewardModel {
        state_dim: ds,
        action_dim: da,
        config: config.clone(),
        inputs,
        target,
        network: Some(best_net),
    };
    let report = FitReport {
        epochs_run,
        best_epoch,
        initial_validation_nll: initial,
        best_validation_nll: best,
        train_size: n_train,
        validation_size: val_idx.len(),
        seed,
    };
    Ok((model, report))
}
