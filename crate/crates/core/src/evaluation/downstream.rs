//! Fine-tune on a selection, measure on held-out reference data.

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::prefix::per_token_log_likelihood;
use crate::tiny_lm::{train_lm, LmParams, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Downstream {
    /// Mean per-token negative log-likelihood on the held-out set.
    pub nll: f64,
    pub ppl: f64,
}

impl Downstream {
    fn from_nll(nll: f64) -> Self {
        Downstream { nll, ppl: nll.exp() }
    }
}

/// Held-out perplexity of `params` itself, with no prefix.
pub fn heldout_perplexity(params: &LmParams, heldout: &[CorpusRecord]) -> Result<Downstream> {
    Ok(Downstream::from_nll(-per_token_log_likelihood(params, None, heldout)?))
}

/// Fine-tunes a copy of `base` on `selected` and evaluates it on `heldout`
/// without any prefix. `base` is left untouched.
pub fn downstream_eval(
    base: &LmParams,
    selected: &[CorpusRecord],
    heldout: &[CorpusRecord],
    hyper: &TrainHyper,
) -> Result<Downstream> {
    if selected.is_empty() {
        return Err(Error::Argument("downstream evaluation needs a non-empty selection".into()));
    }
    if heldout.is_empty() {
        return Err(Error::Argument("downstream evaluation needs a non-empty held-out set".into()));
    }
    let (tuned, _) = train_lm(base, selected, hyper)?;
    heldout_perplexity(&tuned, heldout)
}
