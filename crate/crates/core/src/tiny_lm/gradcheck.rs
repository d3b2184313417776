//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenSequence;
use crate::error::Result;
use crate::prefix::DomainPrefix;

use super::forward::{loss_and_grads, mean_nll, Gradients, Trainable};
use super::params::LmParams;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − fd| / max(1, |fd|)` over the sampled coordinates.
    pub max_rel_err: f64,
    pub coords: usize,
}

pub fn grad_check(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    batch: &[TokenSequence],
    trainable: Trainable,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheck> {
    grad_check_with(params, prefix, batch, trainable, n_coords, seed, |_| {})
}

/// Like [`grad_check`], but lets the caller tamper with the analytic
/// gradients before comparison (mutation testing of the checker itself).
pub fn grad_check_with(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    batch: &[TokenSequence],
    trainable: Trainable,
    n_coords: usize,
    seed: u64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheck> {
    let (_, mut grads) = loss_and_grads(params, prefix, batch, trainable)?;
    tamper(&mut grads);
    let sizes: Vec<usize> = grads.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(GradCheck {
            max_rel_err: 0.0,
            coords: 0,
        });
    }
    let n_param_tensors = grads
        .params
        .as_ref()
        .map(|p| p.named_tensors().len())
        .unwrap_or(0);
    let analytic: Vec<&[f64]> = grads.tensors().iter().map(|t| &t.data[..]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    for _ in 0..n_coords {
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let eval = |delta: f64| -> Result<f64> {
            if ti < n_param_tensors {
                let mut p = params.clone();
                p.tensors_mut()[ti].data[flat] += delta;
                mean_nll(&p, prefix, batch)
            } else {
                let mut pre = prefix.expect("prefix gradients imply a prefix").clone();
                pre.tensors[ti - n_param_tensors].data[flat] += delta;
                mean_nll(params, Some(&pre), batch)
            }
        };
        let fd = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        let a = analytic[ti][flat];
        let err = (a - fd).abs() / fd.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(GradCheck {
        max_rel_err: max_err,
        coords: n_coords,
    })
}
