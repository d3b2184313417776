//! Threshold, prefix-length and model-size sweeps.

use std::collections::HashMap;

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::prefix::{init_prefix, mean_log_likelihood, per_token_log_likelihood, tune_prefix, DomainPrefix, TuneHyper};
use crate::scoring::{Scorer, SelectionConfig};
use crate::tiny_lm::{LmConfig, LmParams, TrainHyper};

use super::downstream::downstream_eval;
use super::experiment::{build_datasets, evaluate, train_base, tune, DownstreamScope, ExperimentConfig};
use super::metrics::classification_metrics;
use super::report::{ModelSizeRow, PrefixLengthRow, ThresholdRow};

/// Held-out data and budget for optional downstream runs inside a sweep.
pub struct DownstreamArgs<'a> {
    pub heldout: &'a [CorpusRecord],
    pub hyper: &'a TrainHyper,
}

/// Scores the pool once, then applies every threshold to the shared scores.
/// A record is in-domain when its label equals `target_label`.
pub fn ablate_threshold(
    pool: &[CorpusRecord],
    params: &LmParams,
    prefix: &DomainPrefix,
    taus: &[f64],
    selection: &SelectionConfig,
    target_label: &str,
    downstream: Option<DownstreamArgs<'_>>,
) -> Result<Vec<ThresholdRow>> {
    if taus.is_empty() {
        return Err(Error::Argument("threshold sweep needs at least one tau".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Argument(format!("tau must be finite and > 0, got {t}")));
    }
    let scorer = Scorer::new(params, prefix, selection.clone())?;
    let scores = scorer.score_all(pool)?;
    let labels: HashMap<String, bool> = pool
        .iter()
        .map(|r| (r.id.clone(), r.label.as_deref() == Some(target_label)))
        .collect();
    let pairs: Vec<(String, f64)> = scores.iter().map(|s| (s.id.clone(), s.log_ratio)).collect();
    taus.iter()
        .map(|&tau| {
            let cfg = SelectionConfig { tau, ..selection.clone() };
            let chosen: Vec<CorpusRecord> = pool
                .iter()
                .zip(&scores)
                .filter(|(_, s)| cfg.accepts(s.log_ratio, s.truncated))
                .map(|(r, _)| r.clone())
                .collect();
            let m = classification_metrics(&pairs, &labels, tau, &[])?;
            let downstream_ppl = match &downstream {
                Some(d) if !chosen.is_empty() => Some(downstream_eval(params, &chosen, d.heldout, d.hyper)?.ppl),
                _ => None,
            };
            Ok(ThresholdRow {
                tau,
                retention: if pool.is_empty() { 0.0 } else { chosen.len() as f64 / pool.len() as f64 },
                selected: chosen.len(),
                f1: m.f1_at_tau,
                downstream_ppl,
            })
        })
        .collect()
}

/// Independent tunes per prefix length, all from the same initialization
/// seed, evaluated on the held-out reference split.
pub fn ablate_prefix_length(
    params: &LmParams,
    reference: &[CorpusRecord],
    heldout: &[CorpusRecord],
    ms: &[usize],
    hyper: &TuneHyper,
    seed: u64,
) -> Result<Vec<PrefixLengthRow>> {
    if ms.is_empty() {
        return Err(Error::Argument("prefix-length sweep needs at least one m".into()));
    }
    ms.iter()
        .map(|&m| {
            let init = init_prefix(&params.config, m, seed)?;
            let (tuned, _) = tune_prefix(params, &init, reference, hyper)?;
            Ok(PrefixLengthRow {
                m,
                trainable_params: tuned.num_params(),
                heldout_log_likelihood: mean_log_likelihood(params, Some(&tuned), heldout)?,
                heldout_per_token: per_token_log_likelihood(params, Some(&tuned), heldout)?,
            })
        })
        .collect()
}

/// Runs the whole pipeline once per model configuration with shared seeds.
pub fn ablate_model_size(
    configs: &[LmConfig],
    base: &ExperimentConfig,
    with_downstream: bool,
) -> Result<Vec<ModelSizeRow>> {
    if configs.len() < 2 {
        return Err(Error::Argument("model-size sweep needs at least two configs".into()));
    }
    configs
        .iter()
        .map(|lm| {
            let cfg = ExperimentConfig { lm: lm.clone(), ..base.clone() };
            cfg.validate()?;
            let data = build_datasets(&cfg)?;
            let (params, _) = train_base(&cfg, &data)?;
            let prefix = tune(&cfg, &params, &data.reference, cfg.prefix_len)?;
            let scope = if with_downstream { DownstreamScope::Core } else { DownstreamScope::None };
            let report = evaluate(&cfg, &params, &prefix, &data, scope)?;
            Ok(ModelSizeRow {
                config_hash: lm.hash(),
                d_model: lm.d_model,
                n_layers: lm.n_layers,
                params: params.num_params(),
                auc: report.auc,
                downstream_ppl: report.downstream_ppl,
            })
        })
        .collect()
}
