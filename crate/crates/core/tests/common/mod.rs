//! Test-only reference implementations. Nothing here calls into the
//! library's forward/backward code; it only reads parameter tensors.

#![allow(dead_code)]

use domainsift::corpus::{TokenSequence, VOCAB_SIZE};
use domainsift::prefix::{DomainPrefix, PrefixMode};
use domainsift::tiny_lm::LmParams;

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let r = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(v, (g, b))| (v - mean) * r * g + b)
        .collect()
}

/// `v · W` with `W` stored row-major as `[in × out]`.
fn vec_mat(v: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (k, &a) in v.iter().enumerate() {
        for j in 0..out {
            y[j] += a * w[k * out + j];
        }
    }
    y
}

fn gelu(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (c * (u + 0.044715 * u.powi(3))).tanh())
}

/// Logits for the token following `inputs`, recomputing the whole network
/// from scratch on exactly these inputs.
pub fn oracle_next_logits(p: &LmParams, prefix: Option<&DomainPrefix>, inputs: &[u32]) -> Vec<f64> {
    let c = &p.config;
    let d = c.d_model;
    let dh = d / c.n_heads;
    let prefix = prefix.filter(|pr| pr.len > 0);

    let mut h: Vec<Vec<f64>> = Vec::new();
    if let Some(pr) = prefix {
        if pr.mode == PrefixMode::Embedding {
            for r in 0..pr.len {
                h.push(pr.tensors[0].data[r * d..(r + 1) * d].to_vec());
            }
        }
    }
    for (t, &tok) in inputs.iter().enumerate() {
        let row: Vec<f64> = (0..d)
            .map(|j| p.wte.data[tok as usize * d + j] + p.wpe.data[t * d + j])
            .collect();
        h.push(row);
    }
    let n = h.len();

    for (l, lp) in p.layers.iter().enumerate() {
        let a: Vec<Vec<f64>> = h.iter().map(|x| layer_norm(x, &lp.ln1_g.data, &lp.ln1_b.data)).collect();
        let q: Vec<Vec<f64>> = a.iter().map(|x| vec_mat(x, &lp.wq.data, d)).collect();
        let mut keys: Vec<Vec<f64>> = Vec::new();
        let mut vals: Vec<Vec<f64>> = Vec::new();
        let mut n_extra = 0;
        if let Some(pr) = prefix {
            if pr.mode == PrefixMode::KeyValue {
                n_extra = pr.len;
                for r in 0..pr.len {
                    keys.push(pr.tensors[2 * l].data[r * d..(r + 1) * d].to_vec());
                    vals.push(pr.tensors[2 * l + 1].data[r * d..(r + 1) * d].to_vec());
                }
            }
        }
        for x in &a {
            keys.push(vec_mat(x, &lp.wk.data, d));
            vals.push(vec_mat(x, &lp.wv.data, d));
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut concat = vec![0.0; d];
            for hd in 0..c.n_heads {
                let lo = hd * dh;
                let visible = n_extra + i + 1;
                let scores: Vec<f64> = (0..visible)
                    .map(|j| {
                        (lo..lo + dh).map(|e| q[i][e] * keys[j][e]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for j in 0..visible {
                    for e in lo..lo + dh {
                        concat[e] += w[j] / z * vals[j][e];
                    }
                }
            }
            let proj = vec_mat(&concat, &lp.wo.data, d);
            let x1: Vec<f64> = h[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
            let cn = layer_norm(&x1, &lp.ln2_g.data, &lp.ln2_b.data);
            let u = vec_mat(&cn, &lp.w1.data, c.d_ff);
            let g: Vec<f64> = u.iter().zip(&lp.b1.data).map(|(u, b)| gelu(u + b)).collect();
            let f = vec_mat(&g, &lp.w2.data, d);
            next.push((0..d).map(|j| x1[j] + f[j] + lp.b2.data[j]).collect());
        }
        h = next;
    }
    let z = layer_norm(&h[n - 1], &p.lnf_g.data, &p.lnf_b.data);
    vec_mat(&z, &p.w_out.data, VOCAB_SIZE)
}

fn log_softmax_at(logits: &[f64], allowed: Option<&[u32]>, target: u32) -> f64 {
    let ids: Vec<usize> = match allowed {
        Some(a) => a.iter().map(|&x| x as usize).collect(),
        None => (0..logits.len()).collect(),
    };
    if !ids.contains(&(target as usize)) {
        return f64::NEG_INFINITY;
    }
    let m = ids.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = ids.iter().map(|&i| (logits[i] - m).exp()).sum();
    logits[target as usize] - m - s.ln()
}

/// Chain rule over independently recomputed per-position distributions.
pub fn oracle_log_likelihood(
    p: &LmParams,
    prefix: Option<&DomainPrefix>,
    seq: &TokenSequence,
    allowed: Option<&[u32]>,
) -> f64 {
    let mut total = 0.0;
    for t in 0..seq.ids.len() - 1 {
        let logits = oracle_next_logits(p, prefix, &seq.ids[..=t]);
        total += log_softmax_at(&logits, allowed, seq.ids[t + 1]);
    }
    total
}

/// Every string over `alphabet` with length `0..=max_len`.
pub fn enumerate_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Exhaustive pair-counting AUC (ties count one half).
pub fn pair_count_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
