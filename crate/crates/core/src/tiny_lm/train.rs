use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode, CorpusRecord, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::forward::{loss_and_grads, Gradients, Trainable};
use super::params::LmParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 1e-3,
            weight_decay: 0.1,
            epochs: 3,
            batch_size: 8,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.learning_rate > 0.0) {
            errs.push("learning_rate must be > 0".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            errs.push("weight_decay must be >= 0".to_string());
        }
        if self.batch_size < 1 {
            errs.push("batch_size must be >= 1".to_string());
        }
        if !(self.grad_clip_norm >= 0.0) {
            errs.push("grad_clip_norm must be >= 0 (0 disables clipping)".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. `decay[i]` says whether tensor `i` is weight-decayed.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: Vec<&Tensor>, decay: &[bool]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let shrink = if decay[i] { 1.0 - self.lr * self.weight_decay } else { 1.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] = p.data[j] * shrink - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping. `max_norm == 0` disables clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Trains a copy of `params` on `corpus`; returns the new weights and the
/// per-epoch token-weighted mean training loss.
pub fn train_lm(
    params: &LmParams,
    corpus: &[CorpusRecord],
    hyper: &TrainHyper,
) -> Result<(LmParams, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    hyper.validate()?;
    let seqs: Vec<TokenSequence> = corpus
        .iter()
        .map(|r| encode(r.text.as_bytes(), params.config.context_len))
        .collect();
    let mut out = params.clone();
    let decay: Vec<bool> = out.named_tensors().iter().map(|(_, t)| t.shape.len() >= 2).collect();
    let mut opt = AdamW::new(hyper.learning_rate, hyper.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let (loss, mut grads) = loss_and_grads(&out, None, &batch, Trainable::Params)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            let n: usize = batch.iter().map(|s| s.predicted()).sum();
            loss_sum += loss * n as f64;
            tokens += n;
            clip_grad_norm(&mut grads, hyper.grad_clip_norm);
            let g = grads.params.as_ref().expect("params selected");
            let gt: Vec<&Tensor> = g.named_tensors().into_iter().map(|(_, t)| t).collect();
            opt.step(out.tensors_mut(), gt, &decay);
        }
        let mean = loss_sum / tokens as f64;
        log::info!("train epoch {}/{}: loss {mean:.4}", epoch + 1, hyper.epochs);
        curve.push(mean);
    }
    if !out.is_finite() {
        return Err(Error::Divergence { epoch: hyper.epochs });
    }
    Ok((out, curve))
}
