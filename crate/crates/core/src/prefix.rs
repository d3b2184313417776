//! The learned domain prefix and its maximum-likelihood tuning against a
//! frozen base model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{encode, CorpusRecord, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tiny_lm::{
    check_prefix, clip_grad_norm, grad_check_with, log_likelihood, loss_and_grads, AdamW,
    Gradients, LmConfig, LmParams, Trainable, INIT_STD,
};

/// Default number of prefix positions.
pub const DEFAULT_PREFIX_LEN: usize = 30;

/// Coordinates sampled by [`prefix_grad_check`].
pub const GRAD_CHECK_COORDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// Per-layer key/value blocks prepended to attention.
    #[default]
    KeyValue,
    /// Soft prompt: virtual input rows at the embedding level.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixProvenance {
    pub ref_corpus_hash: String,
    pub hyper: TuneHyper,
    pub final_ref_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainPrefix {
    pub mode: PrefixMode,
    /// Number of prefix positions `m`; zero makes the prefix a no-op.
    pub len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    /// [`LmConfig::hash`] of the model the prefix belongs to.
    pub config_hash: String,
    /// Key/value mode: `[k_0, v_0, k_1, v_1, ...]`, each `[len × d_model]`.
    /// Embedding mode: a single `[len × d_model]` block.
    pub tensors: Vec<Tensor>,
    pub provenance: Option<PrefixProvenance>,
}

impl DomainPrefix {
    pub fn key(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer]
    }

    pub fn value(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1]
    }

    pub fn is_noop(&self) -> bool {
        self.len == 0
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        match self.mode {
            PrefixMode::KeyValue => self
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let kind = if i % 2 == 0 { "key" } else { "value" };
                    (format!("prefix.{}.{kind}", i / 2), t)
                })
                .collect(),
            PrefixMode::Embedding => vec![("prefix.embedding".to_string(), &self.tensors[0])],
        }
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn validate_against(&self, config: &LmConfig) -> Result<()> {
        if self.config_hash != config.hash() {
            return Err(Error::Shape(format!(
                "prefix was built for config {}, model config is {}",
                self.config_hash,
                config.hash()
            )));
        }
        let probe = LmParams::zeros(config)?;
        check_prefix(&probe, self)
    }
}

/// Tuning hyperparameters; defaults are lr 1e-3, weight decay 0.1,
/// 10 epochs, batch size 4, gradient clipping at norm 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TuneHyper {
    fn default() -> Self {
        TuneHyper {
            learning_rate: 1e-3,
            weight_decay: 0.1,
            epochs: 10,
            batch_size: 4,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TuneHyper {
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
            errs.push("grad_clip_norm must be >= 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

pub fn init_prefix(config: &LmConfig, m: usize, seed: u64) -> Result<DomainPrefix> {
    init_prefix_with_mode(config, m, seed, PrefixMode::KeyValue)
}

pub fn init_prefix_with_mode(
    config: &LmConfig,
    m: usize,
    seed: u64,
    mode: PrefixMode,
) -> Result<DomainPrefix> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = match mode {
        PrefixMode::KeyValue => 2 * config.n_layers,
        PrefixMode::Embedding => 1,
    };
    let tensors = (0..count)
        .map(|_| Tensor::randn(&[m, config.d_model], INIT_STD, &mut rng))
        .collect();
    Ok(DomainPrefix {
        mode,
        len: m,
        d_model: config.d_model,
        n_layers: config.n_layers,
        config_hash: config.hash(),
        tensors,
        provenance: None,
    })
}

/// SHA-256 over ids and texts in order.
pub fn corpus_hash(records: &[CorpusRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.id.as_bytes());
        h.update([0u8]);
        h.update(r.text.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

pub(crate) fn encode_all(records: &[CorpusRecord], context_len: usize) -> Vec<TokenSequence> {
    records
        .iter()
        .map(|r| encode(r.text.as_bytes(), context_len))
        .collect()
}

/// Per-record log-likelihoods (nats) in input order.
pub fn record_log_likelihoods(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    seqs: &[TokenSequence],
) -> Result<Vec<f64>> {
    seqs.par_iter()
        .map(|s| log_likelihood(params, prefix, s))
        .collect()
}

/// Mean sequence log-likelihood of `records` (the summed objective divided
/// by the record count).
pub fn mean_log_likelihood(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    records: &[CorpusRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Argument("no records to evaluate".into()));
    }
    let seqs = encode_all(records, params.config.context_len);
    let lls = record_log_likelihoods(params, prefix, &seqs)?;
    Ok(lls.iter().sum::<f64>() / records.len() as f64)
}

/// Mean log-likelihood per predicted token over `records`.
pub fn per_token_log_likelihood(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    records: &[CorpusRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Argument("no records to evaluate".into()));
    }
    let seqs = encode_all(records, params.config.context_len);
    let lls = record_log_likelihoods(params, prefix, &seqs)?;
    let tokens: usize = seqs.iter().map(|s| s.predicted()).sum();
    Ok(lls.iter().sum::<f64>() / tokens as f64)
}

/// Maximizes the reference corpus likelihood over the prefix tensors only.
///
/// Returns the tuned prefix and, per epoch, the mean sequence log-likelihood
/// of the reference corpus measured after that epoch's updates.
pub fn tune_prefix(
    params: &LmParams,
    prefix: &DomainPrefix,
    ref_corpus: &[CorpusRecord],
    hyper: &TuneHyper,
) -> Result<(DomainPrefix, Vec<f64>)> {
    if ref_corpus.is_empty() {
        return Err(Error::Argument("reference corpus is empty".into()));
    }
    hyper.validate()?;
    check_prefix(params, prefix)?;

    let seqs = encode_all(ref_corpus, params.config.context_len);
    let mut tuned = prefix.clone();
    let mut opt = AdamW::new(hyper.learning_rate, hyper.weight_decay);
    let decay = vec![true; tuned.tensors.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        if !tuned.is_noop() {
            for chunk in order.chunks(hyper.batch_size) {
                let batch: Vec<TokenSequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
                let (loss, mut grads) = loss_and_grads(params, Some(&tuned), &batch, Trainable::Prefix)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                clip_grad_norm(&mut grads, hyper.grad_clip_norm);
                step_prefix(&mut opt, &mut tuned, &grads, &decay);
            }
        }
        let lls = record_log_likelihoods(params, Some(&tuned), &seqs)?;
        let mean = lls.iter().sum::<f64>() / seqs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::info!("prefix epoch {epoch}/{}: mean ref log-likelihood {mean:.4}", hyper.epochs);
        curve.push(mean);
    }

    let final_ll = match curve.last() {
        Some(&v) => v,
        None => {
            let lls = record_log_likelihoods(params, Some(&tuned), &seqs)?;
            lls.iter().sum::<f64>() / seqs.len() as f64
        }
    };
    tuned.provenance = Some(PrefixProvenance {
        ref_corpus_hash: corpus_hash(ref_corpus),
        hyper: hyper.clone(),
        final_ref_log_likelihood: final_ll,
    });
    Ok((tuned, curve))
}

fn step_prefix(opt: &mut AdamW, prefix: &mut DomainPrefix, grads: &Gradients, decay: &[bool]) {
    let g = grads.prefix.as_ref().expect("prefix selected");
    opt.step(prefix.tensors.iter_mut().collect(), g.iter().collect(), decay);
}

/// Largest relative error between analytic prefix gradients and central
/// finite differences over [`GRAD_CHECK_COORDS`] random prefix coordinates.
pub fn prefix_grad_check(params: &LmParams, prefix: &DomainPrefix, sample: &TokenSequence) -> Result<f64> {
    prefix_grad_check_with(params, prefix, sample, |_| {})
}

pub fn prefix_grad_check_with(
    params: &LmParams,
    prefix: &DomainPrefix,
    sample: &TokenSequence,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<f64> {
    if prefix.is_noop() {
        return Ok(0.0);
    }
    let report = grad_check_with(
        params,
        Some(prefix),
        std::slice::from_ref(sample),
        Trainable::Prefix,
        GRAD_CHECK_COORDS,
        0x5eed,
        tamper,
    )?;
    Ok(report.max_rel_err)
}
