use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSequence, BOS, EOS};
use crate::error::Result;
use crate::prefix::DomainPrefix;

use super::forward::forward_logits;
use super::params::LmParams;

/// Ancestral sampling until EOS or `max_len` text tokens (clamped to the
/// context length). BOS is never emitted inside text. A sequence that stops
/// at `max_len` without EOS is marked truncated.
pub fn sample(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    max_len: usize,
    seed: u64,
) -> Result<TokenSequence> {
    let max_len = max_len.min(params.config.context_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = TokenSequence {
        ids: vec![BOS],
        truncated: true,
    };
    while seq.ids.len() - 1 < max_len {
        // Score the sequence as if one more token followed; the last logits
        // row is the next-token distribution.
        let mut probe = seq.clone();
        probe.ids.push(EOS);
        let grid = forward_logits(params, prefix, &probe)?;
        let mut probs = grid.probs(grid.positions - 1);
        probs[BOS as usize] = 0.0;
        let total: f64 = probs.iter().sum();
        let mut dart = rng.gen::<f64>() * total;
        let mut next = EOS;
        for (id, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            next = id as u32;
            dart -= p;
            if dart <= 0.0 {
                break;
            }
        }
        seq.ids.push(next);
        if next == EOS {
            seq.truncated = false;
            break;
        }
    }
    Ok(seq)
}
