use alloc::vec;
use alloc::vec::Vec;

use super::RewardModel;
use crate::numerics::SymMatrix;
use crate::{Error, Result};

/// Finite-difference step for action coordinate value `a_k`.
#[inline]
pub fn fd_step(a_k: f64) -> f64 {
    1e-3 * (1.0 + a_k.abs())
}

/// Number of function evaluations in the second-difference stencil.
fn stencil_len(d: usize) -> usize {
    1 + 2 * d + d * (d - 1)
}

/// Writes the stencil points around `a` into `out` (row-major, `d` per row).
fn stencil_points(a: &[f64], out: &mut [f64]) {
    let d = a.len();
    let steps: Vec<f64> = a.iter().map(|x| fd_step(*x)).collect();
    let mut row = 0;
    let mut push = |delta: &[(usize, f64)], out: &mut [f64]| {
        let p = &mut out[row * d..(row + 1) * d];
        p.copy_from_slice(a);
        for &(k, v) in delta {
            p[k] += v;
        }
        row += 1;
    };
    push(&[], out);
    for k in 0..d {
        push(&[(k, steps[k])], out);
        push(&[(k, -steps[k])], out);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            push(&[(k, steps[k]), (l, steps[l])], out);
            push(&[(k, -steps[k]), (l, -steps[l])], out);
        }
    }
}

/// Combines stencil evaluations `f` into a Hessian.
fn assemble(a: &[f64], f: &[f64]) -> Result<SymMatrix> {
    let d = a.len();
    let steps: Vec<f64> = a.iter().map(|x| fd_step(*x)).collect();
    let f0 = f[0];
    let plus = |k: usize| f[1 + 2 * k];
    let minus = |k: usize| f[2 + 2 * k];
    let mut h = vec![0.0; d * d];
    for k in 0..d {
        h[k * d + k] = (plus(k) - 2.0 * f0 + minus(k)) / (steps[k] * steps[k]);
    }
    let mut idx = 1 + 2 * d;
    for k in 0..d {
        for l in (k + 1)..d {
            let (fpp, fmm) = (f[idx], f[idx + 1]);
            idx += 2;
            let v = (fpp - plus(k) - plus(l) + 2.0 * f0 - minus(k) - minus(l) + fmm)
                / (2.0 * steps[k] * steps[l]);
            h[k * d + l] = v;
            h[l * d + k] = v;
        }
    }
    for k in 0..d {
        for l in 0..d {
            if !h[k * d + l].is_finite() {
                return Err(Error::NonFiniteHessian { row: k, col: l });
            }
        }
    }
    SymMatrix::from_row_major(d, &h)
}

/// Finite-difference Hessian of an arbitrary scalar function of the action,
/// with the same stencil and steps used for the reward model.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, a: &[f64]) -> Result<SymMatrix> {
    let d = a.len();
    let m = stencil_len(d);
    let mut pts = vec![0.0; m * d];
    stencil_points(a, &mut pts);
    let vals: Vec<f64> = pts.chunks_exact(d).map(&mut f).collect();
    assemble(a, &vals)
}

/// Action Hessians of the model mean at `rows` points `(s_i, a_i)` given as
/// row-major state and action buffers. Stencils for many rows are evaluated
/// in one batch.
pub fn hessians_at(
    model: &RewardModel,
    states: &[f64],
    actions: &[f64],
    rows: usize,
) -> Result<Vec<SymMatrix>> {
    let (ds, da) = (model.state_dim(), model.action_dim());
    if states.len() != rows * ds || actions.len() != rows * da {
        return Err(Error::DimensionMismatch {
            expected: rows * ds,
            got: states.len(),
        });
    }
    const CHUNK: usize = 64;
    let m = stencil_len(da);
    let width = ds + da;
    let mut out = Vec::with_capacity(rows);
    let mut pts = vec![0.0; m * da];
    let mut raw = Vec::with_capacity(CHUNK * m * width);
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        raw.clear();
        for i in start..end {
            let s = &states[i * ds..(i + 1) * ds];
            stencil_points(&actions[i * da..(i + 1) * da], &mut pts);
            for p in pts.chunks_exact(da) {
                raw.extend_from_slice(s);
                raw.extend_from_slice(p);
            }
        }
        let preds = model.predict_batch(&raw, (end - start) * m)?;
        let means: Vec<f64> = preds.iter().map(|p| p.0).collect();
        for (j, i) in (start..end).enumerate() {
            out.push(assemble(
                &actions[i * da..(i + 1) * da],
                &means[j * m..(j + 1) * m],
            )?);
        }
        start = end;
    }
    Ok(out)
}
