//! Forward pass with optional domain prefix, and its exact reverse-mode
//! gradient.
//!
//! Rows of the residual stream are `[virtual prompt rows] ++ [text rows]`.
//! Virtual rows exist only for embedding-level prefixes; key/value prefixes
//! instead add `m` extra keys and values to every layer's attention. Neither
//! kind receives a positional embedding or produces a prediction.

use rayon::prelude::*;

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::prefix::{DomainPrefix, PrefixMode};
use crate::tensor::{acc_xt_dy, dot, log_sum_exp, matmul, matmul_wt, softmax_in_place, Tensor};

use super::params::LmParams;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Raw next-token logits, one row per predicted position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsGrid {
    pub positions: usize,
    pub vocab: usize,
    pub logits: Vec<f64>,
}

impl LogitsGrid {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.logits[t * self.vocab..(t + 1) * self.vocab]
    }

    /// Softmax of row `t`.
    pub fn probs(&self, t: usize) -> Vec<f64> {
        let mut r = self.row(t).to_vec();
        softmax_in_place(&mut r);
        r
    }
}

/// Restricts the predictive distribution to a subset of the vocabulary;
/// logits outside the subset are treated as `-inf`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMask {
    allowed: Vec<bool>,
}

impl VocabMask {
    pub fn new(vocab: usize, allowed_ids: &[u32]) -> Self {
        let mut allowed = vec![false; vocab];
        for &id in allowed_ids {
            allowed[id as usize] = true;
        }
        VocabMask { allowed }
    }

    pub fn allows(&self, id: u32) -> bool {
        self.allowed.get(id as usize).copied().unwrap_or(false)
    }

    fn log_norm(&self, row: &[f64]) -> f64 {
        let kept: Vec<f64> = row
            .iter()
            .zip(&self.allowed)
            .filter_map(|(&x, &a)| a.then_some(x))
            .collect();
        log_sum_exp(&kept)
    }
}

/// Which tensors receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    Params,
    Prefix,
    Both,
}

impl Trainable {
    fn params(self) -> bool {
        matches!(self, Trainable::Params | Trainable::Both)
    }
    fn prefix(self) -> bool {
        matches!(self, Trainable::Prefix | Trainable::Both)
    }
}

/// Gradients for the selected tensors only; unselected groups are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Option<LmParams>,
    pub prefix: Option<Vec<Tensor>>,
}

impl Gradients {
    fn add_assign(&mut self, other: &Gradients) {
        if let (Some(a), Some(b)) = (&mut self.params, &other.params) {
            for (x, y) in a.tensors_mut().into_iter().zip(b.named_tensors()) {
                x.add_assign(y.1);
            }
        }
        if let (Some(a), Some(b)) = (&mut self.prefix, &other.prefix) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
    }

    /// All gradient tensors, params first, in their canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        if let Some(p) = &self.params {
            out.extend(p.named_tensors().into_iter().map(|(_, t)| t));
        }
        if let Some(p) = &self.prefix {
            out.extend(p.iter());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(p) = &mut self.params {
            out.extend(p.tensors_mut());
        }
        if let Some(p) = &mut self.prefix {
            out.extend(p.iter_mut());
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt()
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    a: Vec<f64>,
    ln1: LnCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query row][key]`, keys are `m` prefix keys then `rows` text keys.
    att: Vec<f64>,
    attn: Vec<f64>,
    c: Vec<f64>,
    ln2: LnCache,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct Cache {
    rows: usize,
    virt: usize,
    kv_len: usize,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Vec<f64>,
    logits: Vec<f64>,
}

fn ln_forward(x: &[f64], n: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (xi[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates scale/bias gradients when given.
fn ln_backward(
    dy: &[f64],
    cache: &LnCache,
    n: usize,
    d: usize,
    g: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        if let Some((dg, db)) = grads.as_mut() {
            for j in 0..d {
                dg[j] += dyi[j] * xh[j];
                db[j] += dyi[j];
            }
        }
        for j in 0..d {
            dxhat[j] = dyi[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

pub(crate) fn check_prefix(params: &LmParams, prefix: &DomainPrefix) -> Result<()> {
    let c = &params.config;
    if prefix.d_model != c.d_model {
        return Err(Error::Shape(format!(
            "prefix d_model {} != model d_model {}",
            prefix.d_model, c.d_model
        )));
    }
    let expected_tensors = match prefix.mode {
        PrefixMode::KeyValue => {
            if prefix.n_layers != c.n_layers {
                return Err(Error::Shape(format!(
                    "prefix has {} layers, model has {}",
                    prefix.n_layers, c.n_layers
                )));
            }
            2 * c.n_layers
        }
        PrefixMode::Embedding => 1,
    };
    if prefix.tensors.len() != expected_tensors {
        return Err(Error::Shape(format!(
            "prefix holds {} tensors, expected {expected_tensors}",
            prefix.tensors.len()
        )));
    }
    for t in &prefix.tensors {
        if t.shape != [prefix.len, c.d_model] {
            return Err(Error::Shape(format!(
                "prefix tensor shape {:?}, expected [{}, {}]",
                t.shape, prefix.len, c.d_model
            )));
        }
    }
    Ok(())
}

fn check_seq(params: &LmParams, seq: &TokenSequence) -> Result<()> {
    let c = &params.config;
    if seq.ids.is_empty() {
        return Err(Error::Argument("empty token sequence".into()));
    }
    if seq.predicted() > c.positions() {
        return Err(Error::Shape(format!(
            "sequence predicts {} positions, model has {}",
            seq.predicted(),
            c.positions()
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::Argument(format!("token id {bad} outside vocabulary")));
    }
    Ok(())
}

fn run(params: &LmParams, prefix: Option<&DomainPrefix>, inputs: &[u32]) -> Cache {
    let c = &params.config;
    let (d, nh, dh, ff, vocab) = (c.d_model, c.n_heads, c.head_dim(), c.d_ff, c.vocab_size);
    let (virt, kv_len) = match prefix {
        Some(p) if p.mode == PrefixMode::Embedding => (p.len, 0),
        Some(p) => (0, p.len),
        None => (0, 0),
    };
    let t_len = inputs.len();
    let n = virt + t_len;
    let width = kv_len + n;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; n * d];
    if virt > 0 {
        x[..virt * d].copy_from_slice(&prefix.unwrap().tensors[0].data);
    }
    for (t, &tok) in inputs.iter().enumerate() {
        let row = &mut x[(virt + t) * d..(virt + t + 1) * d];
        let e = params.wte.row(tok as usize);
        let p = params.wpe.row(t);
        for j in 0..d {
            row[j] = e[j] + p[j];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let (a, ln1) = ln_forward(&x, n, d, &lp.ln1_g.data, &lp.ln1_b.data);
        let q = matmul(&a, n, d, &lp.wq.data, d);
        let k = matmul(&a, n, d, &lp.wk.data, d);
        let v = matmul(&a, n, d, &lp.wv.data, d);
        let (kp, vp): (&[f64], &[f64]) = match prefix {
            Some(p) if kv_len > 0 => (&p.tensors[2 * l].data, &p.tensors[2 * l + 1].data),
            _ => (&[], &[]),
        };

        let mut att = vec![0.0; nh * n * width];
        let mut attn = vec![0.0; n * d];
        for h in 0..nh {
            let hs = h * dh;
            for i in 0..n {
                let qi = &q[i * d + hs..i * d + hs + dh];
                let row = &mut att[(h * n + i) * width..(h * n + i) * width + kv_len + i + 1];
                for j in 0..kv_len {
                    row[j] = dot(qi, &kp[j * d + hs..j * d + hs + dh]) * scale;
                }
                for j in 0..=i {
                    row[kv_len + j] = dot(qi, &k[j * d + hs..j * d + hs + dh]) * scale;
                }
                softmax_in_place(row);
                let out = &mut attn[i * d + hs..i * d + hs + dh];
                for (j, &w) in row.iter().enumerate() {
                    let val = if j < kv_len {
                        &vp[j * d + hs..j * d + hs + dh]
                    } else {
                        let jj = j - kv_len;
                        &v[jj * d + hs..jj * d + hs + dh]
                    };
                    for e in 0..dh {
                        out[e] += w * val[e];
                    }
                }
            }
        }
        let proj = matmul(&attn, n, d, &lp.wo.data, d);
        for (xi, pi) in x.iter_mut().zip(&proj) {
            *xi += pi;
        }

        let (cn, ln2) = ln_forward(&x, n, d, &lp.ln2_g.data, &lp.ln2_b.data);
        let mut u = matmul(&cn, n, d, &lp.w1.data, ff);
        for i in 0..n {
            for j in 0..ff {
                u[i * ff + j] += lp.b1.data[j];
            }
        }
        let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        let f = matmul(&g, n, ff, &lp.w2.data, d);
        for i in 0..n {
            for j in 0..d {
                x[i * d + j] += f[i * d + j] + lp.b2.data[j];
            }
        }
        layers.push(LayerCache {
            a,
            ln1,
            q,
            k,
            v,
            att,
            attn,
            c: cn,
            ln2,
            u,
            g,
        });
    }

    let (z, lnf) = ln_forward(&x, n, d, &params.lnf_g.data, &params.lnf_b.data);
    let logits = matmul(&z[virt * d..], t_len, d, &params.w_out.data, vocab);
    Cache {
        rows: n,
        virt,
        kv_len,
        layers,
        lnf,
        z,
        logits,
    }
}

/// Backpropagates `dlogits` through the cached forward pass.
fn backward(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    inputs: &[u32],
    cache: &Cache,
    dlogits: &[f64],
    grads: &mut Gradients,
) {
    let c = &params.config;
    let (d, nh, dh, ff, vocab) = (c.d_model, c.n_heads, c.head_dim(), c.d_ff, c.vocab_size);
    let (n, virt, kv_len) = (cache.rows, cache.virt, cache.kv_len);
    let width = kv_len + n;
    let t_len = inputs.len();
    let scale = 1.0 / (dh as f64).sqrt();
    let want_prefix = grads.prefix.is_some() && prefix.is_some();

    let mut dz = vec![0.0; n * d];
    let dz_text = matmul_wt(dlogits, t_len, vocab, &params.w_out.data, d);
    dz[virt * d..].copy_from_slice(&dz_text);
    if let Some(gp) = grads.params.as_mut() {
        acc_xt_dy(&mut gp.w_out.data, &cache.z[virt * d..], t_len, d, dlogits, vocab);
    }
    let mut dx = {
        let lnf_grads = grads
            .params
            .as_mut()
            .map(|gp| (&mut gp.lnf_g.data[..], &mut gp.lnf_b.data[..]));
        ln_backward(&dz, &cache.lnf, n, d, &params.lnf_g.data, lnf_grads)
    };

    for l in (0..c.n_layers).rev() {
        let lp = &params.layers[l];
        let lc = &cache.layers[l];

        // feed-forward block
        if let Some(gp) = grads.params.as_mut() {
            let gl = &mut gp.layers[l];
            acc_xt_dy(&mut gl.w2.data, &lc.g, n, ff, &dx, d);
            for i in 0..n {
                for j in 0..d {
                    gl.b2.data[j] += dx[i * d + j];
                }
            }
        }
        let dg = matmul_wt(&dx, n, d, &lp.w2.data, ff);
        let du: Vec<f64> = dg.iter().zip(&lc.u).map(|(g, &u)| g * gelu_grad(u)).collect();
        if let Some(gp) = grads.params.as_mut() {
            let gl = &mut gp.layers[l];
            acc_xt_dy(&mut gl.w1.data, &lc.c, n, d, &du, ff);
            for i in 0..n {
                for j in 0..ff {
                    gl.b1.data[j] += du[i * ff + j];
                }
            }
        }
        let dc = matmul_wt(&du, n, ff, &lp.w1.data, d);
        let dx_ln2 = {
            let g = grads
                .params
                .as_mut()
                .map(|gp| {
                    let gl = &mut gp.layers[l];
                    (&mut gl.ln2_g.data[..], &mut gl.ln2_b.data[..])
                });
            ln_backward(&dc, &lc.ln2, n, d, &lp.ln2_g.data, g)
        };
        for (a, b) in dx.iter_mut().zip(&dx_ln2) {
            *a += b;
        }

        // attention block
        if let Some(gp) = grads.params.as_mut() {
            acc_xt_dy(&mut gp.layers[l].wo.data, &lc.attn, n, d, &dx, d);
        }
        let dattn = matmul_wt(&dx, n, d, &lp.wo.data, d);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dkp = vec![0.0; kv_len * d];
        let mut dvp = vec![0.0; kv_len * d];
        let (kp, vp): (&[f64], &[f64]) = match prefix {
            Some(p) if kv_len > 0 => (&p.tensors[2 * l].data, &p.tensors[2 * l + 1].data),
            _ => (&[], &[]),
        };
        let mut datt = vec![0.0; width];
        for h in 0..nh {
            let hs = h * dh;
            for i in 0..n {
                let cnt = kv_len + i + 1;
                let att = &lc.att[(h * n + i) * width..(h * n + i) * width + cnt];
                let dout = &dattn[i * d + hs..i * d + hs + dh];
                for j in 0..cnt {
                    let (val, dval) = if j < kv_len {
                        (&vp[j * d + hs..j * d + hs + dh], &mut dvp[j * d + hs..j * d + hs + dh])
                    } else {
                        let jj = j - kv_len;
                        (&lc.v[jj * d + hs..jj * d + hs + dh], &mut dv[jj * d + hs..jj * d + hs + dh])
                    };
                    datt[j] = dot(dout, val);
                    for e in 0..dh {
                        dval[e] += att[j] * dout[e];
                    }
                }
                let s: f64 = att.iter().zip(&datt[..cnt]).map(|(a, b)| a * b).sum();
                let qi = &lc.q[i * d + hs..i * d + hs + dh];
                for j in 0..cnt {
                    let ds = att[j] * (datt[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let (key, dkey) = if j < kv_len {
                        (&kp[j * d + hs..j * d + hs + dh], &mut dkp[j * d + hs..j * d + hs + dh])
                    } else {
                        let jj = j - kv_len;
                        (&lc.k[jj * d + hs..jj * d + hs + dh], &mut dk[jj * d + hs..jj * d + hs + dh])
                    };
                    let dqi = &mut dq[i * d + hs..i * d + hs + dh];
                    for e in 0..dh {
                        dqi[e] += ds * key[e];
                        dkey[e] += ds * qi[e];
                    }
                }
            }
        }
        if want_prefix && kv_len > 0 {
            let gpre = grads.prefix.as_mut().unwrap();
            for (g, v) in gpre[2 * l].data.iter_mut().zip(&dkp) {
                *g += v;
            }
            for (g, v) in gpre[2 * l + 1].data.iter_mut().zip(&dvp) {
                *g += v;
            }
        }
        if let Some(gp) = grads.params.as_mut() {
            let gl = &mut gp.layers[l];
            acc_xt_dy(&mut gl.wq.data, &lc.a, n, d, &dq, d);
            acc_xt_dy(&mut gl.wk.data, &lc.a, n, d, &dk, d);
            acc_xt_dy(&mut gl.wv.data, &lc.a, n, d, &dv, d);
        }
        let mut da = matmul_wt(&dq, n, d, &lp.wq.data, d);
        for (src, w) in [(&dk, &lp.wk), (&dv, &lp.wv)] {
            for (a, b) in da.iter_mut().zip(matmul_wt(src, n, d, &w.data, d)) {
                *a += b;
            }
        }
        let dx_ln1 = {
            let g = grads
                .params
                .as_mut()
                .map(|gp| {
                    let gl = &mut gp.layers[l];
                    (&mut gl.ln1_g.data[..], &mut gl.ln1_b.data[..])
                });
            ln_backward(&da, &lc.ln1, n, d, &lp.ln1_g.data, g)
        };
        for (a, b) in dx.iter_mut().zip(&dx_ln1) {
            *a += b;
        }
    }

    if let Some(gp) = grads.params.as_mut() {
        for (t, &tok) in inputs.iter().enumerate() {
            let src = &dx[(virt + t) * d..(virt + t + 1) * d];
            for (g, s) in gp.wte.row_mut(tok as usize).iter_mut().zip(src) {
                *g += s;
            }
            for (g, s) in gp.wpe.row_mut(t).iter_mut().zip(src) {
                *g += s;
            }
        }
    }
    if want_prefix && virt > 0 {
        let gpre = grads.prefix.as_mut().unwrap();
        for (g, s) in gpre[0].data.iter_mut().zip(&dx[..virt * d]) {
            *g += s;
        }
    }
}

fn split(seq: &TokenSequence) -> (&[u32], &[u32]) {
    let ids = &seq.ids;
    (&ids[..ids.len() - 1], &ids[1..])
}

fn effective_prefix(prefix: Option<&DomainPrefix>) -> Option<&DomainPrefix> {
    // A zero-length prefix takes exactly the no-prefix code path.
    prefix.filter(|p| p.len > 0)
}

pub fn forward_logits(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    seq: &TokenSequence,
) -> Result<LogitsGrid> {
    check_seq(params, seq)?;
    if let Some(p) = prefix {
        check_prefix(params, p)?;
    }
    let (inputs, _) = split(seq);
    let cache = run(params, effective_prefix(prefix), inputs);
    Ok(LogitsGrid {
        positions: inputs.len(),
        vocab: params.config.vocab_size,
        logits: cache.logits,
    })
}

/// Sum of next-token log-probabilities over every predicted position (text
/// bytes and EOS), in nats.
pub fn log_likelihood(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    seq: &TokenSequence,
) -> Result<f64> {
    log_likelihood_masked(params, prefix, seq, None)
}

pub fn log_likelihood_masked(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    seq: &TokenSequence,
    mask: Option<&VocabMask>,
) -> Result<f64> {
    let grid = forward_logits(params, prefix, seq)?;
    let (_, targets) = split(seq);
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let row = grid.row(t);
        let lp = match mask {
            None => row[target as usize] - log_sum_exp(row),
            Some(m) if m.allows(target) => row[target as usize] - m.log_norm(row),
            Some(_) => f64::NEG_INFINITY,
        };
        total += lp;
    }
    Ok(total)
}

/// Per-sequence loss contribution and gradient, `weight` scaling the summed NLL.
fn seq_loss_grad(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    seq: &TokenSequence,
    weight: f64,
    template: &Gradients,
) -> (f64, Gradients) {
    let (inputs, targets) = split(seq);
    let cache = run(params, prefix, inputs);
    let vocab = params.config.vocab_size;
    let mut dlogits = cache.logits.clone();
    let mut nll = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let row = &mut dlogits[t * vocab..(t + 1) * vocab];
        let lse = softmax_in_place(row);
        nll -= cache.logits[t * vocab + target as usize] - lse;
        row[target as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= weight;
        }
    }
    let mut g = template.clone();
    backward(params, prefix, inputs, &cache, &dlogits, &mut g);
    (nll, g)
}

fn zero_grads(params: &LmParams, prefix: Option<&DomainPrefix>, trainable: Trainable) -> Gradients {
    Gradients {
        params: trainable.params().then(|| params.zeros_like()),
        prefix: if trainable.prefix() {
            prefix.map(|p| p.tensors.iter().map(Tensor::zeros_like).collect())
        } else {
            None
        },
    }
}

/// Mean per-token negative log-likelihood over the batch and its exact
/// gradient with respect to the selected tensors.
///
/// Sequences are processed in parallel and their gradients summed in batch
/// order, so the result does not depend on the thread count.
pub fn loss_and_grads(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    batch: &[TokenSequence],
    trainable: Trainable,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    for seq in batch {
        check_seq(params, seq)?;
    }
    if let Some(p) = prefix {
        check_prefix(params, p)?;
    }
    let tokens: usize = batch.iter().map(|s| s.predicted()).sum();
    if tokens == 0 {
        return Err(Error::Argument("batch has no predicted positions".into()));
    }
    let weight = 1.0 / tokens as f64;
    let template = zero_grads(params, prefix, trainable);
    let run_prefix = effective_prefix(prefix);
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|seq| seq_loss_grad(params, run_prefix, seq, weight, &template))
        .collect();
    let mut total = template;
    let mut nll = 0.0;
    for (l, g) in &parts {
        nll += l;
        total.add_assign(g);
    }
    Ok((nll * weight, total))
}

/// Mean per-token NLL without gradients.
pub fn mean_nll(
    params: &LmParams,
    prefix: Option<&DomainPrefix>,
    batch: &[TokenSequence],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let lls: Vec<f64> = batch
        .par_iter()
        .map(|s| log_likelihood(params, prefix, s))
        .collect::<Result<_>>()?;
    let tokens: usize = batch.iter().map(|s| s.predicted()).sum();
    let total: f64 = lls.iter().sum();
    Ok(-total / tokens as f64)
}
