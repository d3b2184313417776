use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::VOCAB_SIZE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of every randomly initialized weight and prefix entry.
pub const INIT_STD: f64 = 0.02;

/// Missing fields in a config file take their [`LmConfig::tiny`] values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig::tiny()
    }
}

impl LmConfig {
    /// d=32, 2 layers, 4 heads, d_ff=64, context 128.
    pub fn tiny() -> Self {
        LmConfig {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            context_len: 128,
            vocab_size: VOCAB_SIZE,
            seed: 42,
        }
    }

    /// d=64, 4 layers, 8 heads, d_ff=128, context 128.
    pub fn small() -> Self {
        LmConfig {
            d_model: 64,
            n_layers: 4,
            n_heads: 8,
            d_ff: 128,
            ..LmConfig::tiny()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Input positions: BOS plus up to `context_len` text bytes.
    pub fn positions(&self) -> usize {
        self.context_len + 1
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ] {
            if v < 1 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if self.context_len < 2 {
            errs.push("context_len must be >= 2".into());
        }
        if self.n_heads >= 1 && self.d_model % self.n_heads != 0 {
            errs.push(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size != VOCAB_SIZE {
            errs.push(format!("vocab_size must be {VOCAB_SIZE}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All weights of the language model. Pre-norm blocks, learned positions,
/// untied output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub config: LmConfig,
    pub wte: Tensor,
    pub wpe: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub w_out: Tensor,
}

impl LayerParams {
    fn init(c: &LmConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, ff) = (c.d_model, c.d_ff);
        LayerParams {
            ln1_g: Tensor::filled(&[d], 1.0),
            ln1_b: Tensor::zeros(&[d]),
            wq: Tensor::randn(&[d, d], INIT_STD, rng),
            wk: Tensor::randn(&[d, d], INIT_STD, rng),
            wv: Tensor::randn(&[d, d], INIT_STD, rng),
            wo: Tensor::randn(&[d, d], INIT_STD, rng),
            ln2_g: Tensor::filled(&[d], 1.0),
            ln2_b: Tensor::zeros(&[d]),
            w1: Tensor::randn(&[d, ff], INIT_STD, rng),
            b1: Tensor::zeros(&[ff]),
            w2: Tensor::randn(&[ff, d], INIT_STD, rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

pub fn init_params(config: &LmConfig) -> Result<LmParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (d, v) = (config.d_model, config.vocab_size);
    let wte = Tensor::randn(&[v, d], INIT_STD, &mut rng);
    let wpe = Tensor::randn(&[config.positions(), d], INIT_STD, &mut rng);
    let layers = (0..config.n_layers)
        .map(|_| LayerParams::init(config, &mut rng))
        .collect();
    let w_out = Tensor::randn(&[d, v], INIT_STD, &mut rng);
    Ok(LmParams {
        config: config.clone(),
        wte,
        wpe,
        layers,
        lnf_g: Tensor::filled(&[d], 1.0),
        lnf_b: Tensor::zeros(&[d]),
        w_out,
    })
}

impl LmParams {
    /// Same shapes as `init_params(config)`, every value zero.
    pub fn zeros(config: &LmConfig) -> Result<Self> {
        let mut p = init_params(config)?;
        p.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.for_each_mut(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        p
    }

    /// Tensors with stable names, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("wte".to_string(), &self.wte), ("wpe".to_string(), &self.wpe)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layers.{l}.{name}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("w_out".into(), &self.w_out));
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.wte, &mut self.wpe];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.w_out);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for t in self.tensors_mut() {
            f(t);
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// SHA-256 over the config and every tensor's bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
