//! Central finite-difference gradient checks.
//!
//! Errors are reported norm-wise, `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`,
//! over the coordinates that were probed. When both norms are below
//! [`VANISHING`] the gradient is structurally zero (a key bias under softmax,
//! a bias ahead of a normalization) and the two sides agree by definition;
//! their ratio would only compare rounding noise.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient norm treated as zero. Central differences with `h = 1e-5` on
/// O(1) losses carry roughly `1e-11` of noise per coordinate.
pub const VANISHING: f64 = 1e-7;

pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = libm::sqrt(a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum());
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nn = libm::sqrt(n.iter().map(|x| x * x).sum());
    let denom = na.max(nn);
    if denom < VANISHING {
        0.0
    } else {
        diff / denom
    }
}

fn probe_indices(len: usize, max_coords: usize, seed: u64) -> Vec<usize> {
    if len <= max_coords {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, len, max_coords).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Worst relative error over all `inputs` of `f`, which must return a scalar.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'static>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|x| t.leaf(x)).collect();
        let loss = f(&mut t, &vars)?;
        Ok(t.scalar(loss))
    };
    let inputs: Vec<Tensor> = inputs.iter().cloned().map(|x| x.with_requires_grad(true)).collect();
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x)).collect();
    let loss = f(&mut t, &vars)?;
    let grads = t.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            numeric.push((eval(&plus)? - eval(&minus)?) / (2.0 * h));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative error over parameters `ids`, probing at most `max_coords`
/// coordinates per parameter (chosen deterministically from `seed`).
pub fn check_params<F>(store: &mut ParamStore, ids: &[ParamId], f: F, h: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    check_params_against(store, ids, &f, &f, h, max_coords, seed)
}

/// Like [`check_params`], but the analytic gradient comes from `analytic`
/// while the finite differences are taken of `numeric`. Used where the
/// production graph carries stop-gradients and `numeric` is the explicit
/// surrogate whose derivative it should equal.
pub fn check_params_against<A, N>(store: &mut ParamStore, ids: &[ParamId], analytic: A, numeric: N, h: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    A: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
    N: for<'a> Fn(&mut Tape<'a>) -> Result<Var>,
{
    let analytic_all = {
        let mut t = Tape::with_params(store);
        let loss = analytic(&mut t)?;
        let g = t.backward(loss)?;
        ids.iter()
            .map(|id| g.param(*id).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; store.get(*id).numel()]))
            .collect::<Vec<_>>()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::with_params(store);
        let loss = numeric(&mut t)?;
        Ok(t.scalar(loss))
    };
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let coords = probe_indices(store.get(*id).numel(), max_coords, seed.wrapping_add(k as u64));
        let mut a = Vec::with_capacity(coords.len());
        let mut n = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = store.get(*id).data()[i];
            store.get_mut(*id).data_mut()[i] = orig + h;
            let fp = eval(store)?;
            store.get_mut(*id).data_mut()[i] = orig - h;
            let fm = eval(store)?;
            store.get_mut(*id).data_mut()[i] = orig;
            n.push((fp - fm) / (2.0 * h));
            a.push(analytic_all[k][i]);
        }
        worst = worst.max(rel_error(&a, &n));
    }
    Ok(worst)
}
