//! Reference selection methods: perplexity filtering, hashed byte n-gram
//! importance weights, random sampling and the full pool.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{create, encode, fmt_f64, json_string, CorpusRecord};
use crate::error::{Error, Result};
use crate::tiny_lm::{log_likelihood, LmParams};

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Perplexity of a record under the base model with no prefix.
pub fn ppl_score(params: &LmParams, record: &CorpusRecord) -> Result<f64> {
    let seq = encode(record.text.as_bytes(), params.config.context_len);
    let ll = log_likelihood(params, None, &seq)?;
    Ok((-ll / seq.predicted() as f64).exp())
}

/// Hashed byte n-gram histogram with add-alpha smoothing applied at query time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramProfile {
    pub n: usize,
    pub buckets: usize,
    pub counts: Vec<f64>,
    pub total: f64,
    pub alpha: f64,
}

impl NgramProfile {
    pub const DEFAULT_N: usize = 2;
    pub const DEFAULT_BUCKETS: usize = 4096;
    pub const DEFAULT_ALPHA: f64 = 1.0;

    pub fn bucket(&self, gram: &[u8]) -> usize {
        (fnv1a(gram) % self.buckets as u64) as usize
    }

    /// Buckets of every byte n-gram in `text`, in order.
    pub fn hashed(&self, text: &[u8]) -> Vec<usize> {
        if text.len() < self.n {
            return Vec::new();
        }
        text.windows(self.n).map(|g| self.bucket(g)).collect()
    }

    pub fn prob(&self, bucket: usize) -> f64 {
        (self.counts[bucket] + self.alpha) / (self.total + self.alpha * self.buckets as f64)
    }

    pub fn log_prob(&self, bucket: usize) -> f64 {
        self.prob(bucket).ln()
    }

    /// The same distribution with counts, total and smoothing mass all
    /// multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        NgramProfile {
            counts: self.counts.iter().map(|c| c * factor).collect(),
            total: self.total * factor,
            alpha: self.alpha * factor,
            ..self.clone()
        }
    }

    fn same_shape(&self, other: &NgramProfile) -> bool {
        self.n == other.n && self.buckets == other.buckets && self.alpha == other.alpha
    }
}

pub fn build_profile<'a, I>(corpus: I, n: usize, buckets: usize, alpha: f64) -> Result<NgramProfile>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    let mut errs = Vec::new();
    if n == 0 {
        errs.push("n-gram order must be >= 1".to_string());
    }
    if buckets == 0 {
        errs.push("bucket count must be >= 1".to_string());
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        errs.push(format!("smoothing alpha must be positive, got {alpha}"));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut profile = NgramProfile {
        n,
        buckets,
        counts: vec![0.0; buckets],
        total: 0.0,
        alpha,
    };
    for rec in corpus {
        for b in profile.hashed(rec.text.as_bytes()) {
            profile.counts[b] += 1.0;
            profile.total += 1.0;
        }
    }
    Ok(profile)
}

/// Importance log-weight `Σ log p_ref(b) − log p_cand(b)` over the record's
/// hashed n-grams; higher means more reference-like.
pub fn dsir_score(reference: &NgramProfile, cand: &NgramProfile, record: &CorpusRecord) -> Result<f64> {
    if !reference.same_shape(cand) {
        return Err(Error::Argument(format!(
            "profile mismatch: (n={}, buckets={}, alpha={}) vs (n={}, buckets={}, alpha={})",
            reference.n, reference.buckets, reference.alpha, cand.n, cand.buckets, cand.alpha
        )));
    }
    Ok(reference
        .hashed(record.text.as_bytes())
        .into_iter()
        .map(|b| reference.log_prob(b) - cand.log_prob(b))
        .sum())
}

/// Uniform sample of `k` ids without replacement, returned in input order.
pub fn random_select(ids: &[String], k: usize, seed: u64) -> Result<Vec<String>> {
    if k > ids.len() {
        return Err(Error::Argument(format!("k = {k} exceeds {} ids", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, ids.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Asc,
    Desc,
}

/// The `k` best ids by value; equal values are ordered by id.
pub fn select_topk_by(scores: &[(String, f64)], k: usize, direction: Direction) -> Result<Vec<String>> {
    if k > scores.len() {
        return Err(Error::Argument(format!("k = {k} exceeds {} scores", scores.len())));
    }
    let mut order: Vec<&(String, f64)> = scores.iter().collect();
    order.sort_by(|a, b| {
        let by_value = match direction {
            Direction::Asc => a.1.total_cmp(&b.1),
            Direction::Desc => b.1.total_cmp(&a.1),
        };
        by_value.then_with(|| a.0.cmp(&b.0))
    });
    Ok(order.into_iter().take(k).map(|s| s.0.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ppl,
    Random,
    Dsir,
    Full,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ppl, Method::Random, Method::Dsir, Method::Full];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ppl => "ppl",
            Method::Random => "random",
            Method::Dsir => "dsir",
            Method::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown baseline method {s:?} (ppl|random|dsir|full)")))
    }
}

/// One line of a baseline score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub id: String,
    pub method: Method,
    /// Perplexity for `ppl`, log-weight for `dsir`, 1/0 membership otherwise.
    pub value: f64,
    pub selected: bool,
}

impl BaselineScore {
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"id\":{},\"method\":\"{}\",\"value\":{},\"selected\":{}}}",
            json_string(&self.id),
            self.method.name(),
            fmt_f64(self.value),
            self.selected
        )
    }
}

/// Inputs a method may need; unused fields are ignored.
pub struct BaselineInputs<'a> {
    pub params: Option<&'a LmParams>,
    pub reference: &'a [CorpusRecord],
    pub seed: u64,
    pub n: usize,
    pub buckets: usize,
    pub alpha: f64,
}

/// Scores the pool with `method` and marks a budget of `k` records
/// (`None` keeps every record for `full` and must be given otherwise).
pub fn run_baseline(
    method: Method,
    pool: &[CorpusRecord],
    k: Option<usize>,
    inputs: &BaselineInputs<'_>,
) -> Result<Vec<BaselineScore>> {
    let k = match (method, k) {
        (Method::Full, k) => k.unwrap_or(pool.len()),
        (_, Some(k)) => k,
        (_, None) => return Err(Error::Argument(format!("{} needs a selection budget", method.name()))),
    };
    let (values, direction): (Vec<f64>, Option<Direction>) = match method {
        Method::Ppl => {
            let params = inputs
                .params
                .ok_or_else(|| Error::Argument("ppl needs model parameters".into()))?;
            let v = pool
                .par_iter()
                .map(|r| ppl_score(params, r))
                .collect::<Result<_>>()?;
            (v, Some(Direction::Asc))
        }
        Method::Dsir => {
            let reference = build_profile(inputs.reference, inputs.n, inputs.buckets, inputs.alpha)?;
            let cand = build_profile(pool, inputs.n, inputs.buckets, inputs.alpha)?;
            let v = pool
                .par_iter()
                .map(|r| dsir_score(&reference, &cand, r))
                .collect::<Result<_>>()?;
            (v, Some(Direction::Desc))
        }
        Method::Random | Method::Full => (Vec::new(), None),
    };
    let ids: Vec<String> = pool.iter().map(|r| r.id.clone()).collect();
    let chosen: std::collections::HashSet<String> = match (method, direction) {
        (Method::Random, _) => random_select(&ids, k, inputs.seed)?.into_iter().collect(),
        (Method::Full, _) => select_topk_by(
            &ids.iter().map(|i| (i.clone(), 0.0)).collect::<Vec<_>>(),
            k,
            Direction::Asc,
        )?
        .into_iter()
        .collect(),
        (_, Some(dir)) => {
            let pairs: Vec<(String, f64)> = ids.iter().cloned().zip(values.iter().copied()).collect();
            select_topk_by(&pairs, k, dir)?.into_iter().collect()
        }
        _ => unreachable!("scored methods have a direction"),
    };
    Ok(pool
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let selected = chosen.contains(&r.id);
            BaselineScore {
                id: r.id.clone(),
                method,
                value: if values.is_empty() { f64::from(u8::from(selected)) } else { values[i] },
                selected,
            }
        })
        .collect())
}

pub(crate) fn write_baseline_scores(
    path: impl AsRef<Path>,
    header: Option<&str>,
    scores: &[BaselineScore],
) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    if let Some(h) = header {
        writeln!(out, "{h}").map_err(io)?;
    }
    for s in scores {
        writeln!(out, "{}", s.to_json_line()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_baseline(path: impl AsRef<Path>, scores: &[BaselineScore]) -> Result<()> {
    write_baseline_scores(path, None, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiny_lm::LmConfig;

    fn recs(texts: &[&str]) -> Vec<CorpusRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusRecord::new(format!("r{i}"), *t))
            .collect()
    }

    fn pairs(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(i, s)| (i.to_string(), *s)).collect()
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let cfg = LmConfig { context_len: 16, ..LmConfig::tiny() };
        let p = LmParams::zeros(&cfg).unwrap();
        for text in ["", "a", "hello world"] {
            let ppl = ppl_score(&p, &CorpusRecord::new("x", text)).unwrap();
            assert!((ppl - 258.0).abs() < 1e-9, "{ppl}");
        }
    }

    #[test]
    fn empty_profile_is_uniform() {
        let p = build_profile(&[], 2, 64, 1.0).unwrap();
        let sum: f64 = (0..64).map(|b| p.prob(b)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((0..64).all(|b| p.prob(b) == 1.0 / 64.0));
    }

    #[test]
    fn single_bigram_dominates() {
        let p = build_profile(&recs(&["aa"]), 2, 4096, 1.0).unwrap();
        let hot = p.bucket(b"aa");
        assert_eq!(p.total, 1.0);
        assert!((0..4096).filter(|&b| b != hot).all(|b| p.prob(b) < p.prob(hot)));
        let sum: f64 = (0..4096).map(|b| p.prob(b)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_profiles_give_zero_weight() {
        let corpus = recs(&["hello there", "general"]);
        let p = build_profile(&corpus, 2, 128, 1.0).unwrap();
        for r in &corpus {
            assert_eq!(dsir_score(&p, &p, r).unwrap(), 0.0);
        }
    }

    #[test]
    fn mismatched_profiles_rejected() {
        let a = build_profile(&[], 2, 16, 1.0).unwrap();
        let b = build_profile(&[], 3, 16, 1.0).unwrap();
        assert!(matches!(
            dsir_score(&a, &b, &CorpusRecord::new("x", "abc")),
            Err(Error::Argument(_))
        ));
        assert!(build_profile(&[], 0, 0, -1.0).is_err());
    }

    #[test]
    fn random_select_contract() {
        let ids: Vec<String> = (0..20).map(|i| format!("{i:02}")).collect();
        assert_eq!(random_select(&ids, 20, 1).unwrap(), ids);
        assert!(random_select(&ids, 0, 1).unwrap().is_empty());
        let a = random_select(&ids, 7, 3).unwrap();
        assert_eq!(a, random_select(&ids, 7, 3).unwrap());
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(random_select(&ids, 21, 1).is_err());
    }

    #[test]
    fn topk_examples() {
        let s = pairs(&[("a", 2.0), ("b", 3.0)]);
        assert_eq!(select_topk_by(&s, 1, Direction::Desc).unwrap(), ["b"]);
        let s = pairs(&[("a", 3.0), ("b", 1.0), ("c", 2.0)]);
        assert_eq!(select_topk_by(&s, 2, Direction::Asc).unwrap(), ["b", "c"]);
        let s = pairs(&[("z", 1.0), ("m", 1.0), ("a", 1.0)]);
        assert_eq!(select_topk_by(&s, 2, Direction::Desc).unwrap(), ["a", "m"]);
        assert!(select_topk_by(&s, 4, Direction::Desc).is_err());
    }

    #[test]
    fn baseline_budgets_match() {
        let pool = recs(&["aaaa", "abab", "bbbb", "abba", "baab"]);
        let reference = recs(&["aaab"]);
        let cfg = LmConfig { context_len: 16, ..LmConfig::tiny() };
        let params = crate::tiny_lm::init_params(&cfg).unwrap();
        let inputs = BaselineInputs {
            params: Some(&params),
            reference: &reference,
            seed: 4,
            n: 2,
            buckets: 16,
            alpha: 1.0,
        };
        for m in Method::ALL {
            let s = run_baseline(m, &pool, Some(2), &inputs).unwrap();
            assert_eq!(s.iter().filter(|x| x.selected).count(), 2, "{m:?}");
            assert_eq!(s, run_baseline(m, &pool, Some(2), &inputs).unwrap());
        }
        let full = run_baseline(Method::Full, &pool, None, &inputs).unwrap();
        assert!(full.iter().all(|x| x.selected));
        assert!(run_baseline(Method::Dsir, &pool, None, &inputs).is_err());
        assert_eq!(Method::parse("dsir").unwrap(), Method::Dsir);
        assert!(Method::parse("lamdas").is_err());
    }
}
