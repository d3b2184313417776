//! Self-labeling synthetic text domains.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// Integer equations with correct results, e.g. `12+7=19 3*4=12`.
    Arith,
    /// Flat JSON-like objects, e.g. `{"id":42,"city":"oslo"}`.
    Jsonish,
    /// Order-2 character Markov chain fit to an embedded English paragraph.
    MarkovEn,
    /// Uniform printable ASCII.
    Noise,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [
        DomainKind::Arith,
        DomainKind::Jsonish,
        DomainKind::MarkovEn,
        DomainKind::Noise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Arith => "arith",
            DomainKind::Jsonish => "jsonish",
            DomainKind::MarkovEn => "markov_en",
            DomainKind::Noise => "noise",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub n_records: usize,
    /// Inclusive byte-length range.
    pub length: (usize, usize),
    pub seed: u64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, n_records: usize, length: (usize, usize), seed: u64) -> Self {
        DomainSpec {
            kind,
            n_records,
            length,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length;
        let mut errs = Vec::new();
        if lo > hi {
            errs.push(format!("{}: length min {lo} > max {hi}", self.kind));
        }
        // Structured domains are filled piece by piece; the smallest piece is
        // 5 bytes plus a separator, so the range must leave room for one.
        let structured_min = match self.kind {
            DomainKind::Arith => Some(5),
            DomainKind::Jsonish => Some(7),
            _ => None,
        };
        if let Some(min) = structured_min {
            if lo < min {
                errs.push(format!("{}: length min must be >= {min}", self.kind));
            }
            if hi < lo + 6 {
                errs.push(format!("{}: length range must span at least 6 bytes", self.kind));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

pub fn gen_domain(spec: &DomainSpec) -> Result<Vec<CorpusRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((spec.kind as u64) << 56));
    let (lo, hi) = spec.length;
    let markov = (spec.kind == DomainKind::MarkovEn).then(CharMarkov::english);
    Ok((0..spec.n_records)
        .map(|i| {
            let target = rng.gen_range(lo..=hi);
            let text = match spec.kind {
                DomainKind::Arith => gen_arith(&mut rng, target, hi),
                DomainKind::Jsonish => gen_jsonish(&mut rng, target, hi),
                DomainKind::MarkovEn => markov.as_ref().unwrap().generate(&mut rng, target),
                DomainKind::Noise => (0..target).map(|_| rng.gen_range(0x20u8..=0x7e) as char).collect(),
            };
            CorpusRecord::new(format!("{}-{}-{i:05}", spec.kind, spec.seed), text)
                .with_label(spec.kind.name())
        })
        .collect())
}

/// Concatenates the domains and shuffles deterministically.
pub fn mix_pool(specs: &[DomainSpec], shuffle_seed: u64) -> Result<Vec<CorpusRecord>> {
    if specs.len() < 2 {
        return Err(Error::Argument("a pool needs at least two domain specs".into()));
    }
    let mut pool = Vec::new();
    for s in specs {
        pool.extend(gen_domain(s)?);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = pool.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(Error::Argument(format!(
            "duplicate record id {} (two specs share kind and seed)",
            dup.id
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(pool)
}

fn gen_arith(rng: &mut ChaCha8Rng, target: usize, max: usize) -> String {
    let mut s = String::new();
    while s.len() < target {
        let sep = usize::from(!s.is_empty());
        let room = max.saturating_sub(s.len() + sep);
        if room < 5 {
            break;
        }
        let eq = arith_equation(rng, room);
        if sep == 1 {
            s.push(' ');
        }
        s.push_str(&eq);
    }
    s
}

fn arith_equation(rng: &mut ChaCha8Rng, room: usize) -> String {
    for _ in 0..16 {
        let op = *[b'+', b'-', b'*'].choose(rng).unwrap() as char;
        let max_digits = if op == '*' { 2 } else { 3 };
        let a = random_number(rng, max_digits);
        let b = random_number(rng, max_digits);
        let c = match op {
            '+' => a + b,
            '-' => a - b,
            _ => a * b,
        };
        let eq = format!("{a}{op}{b}={c}");
        if eq.len() <= room {
            return eq;
        }
    }
    let a = rng.gen_range(0..5);
    let b = rng.gen_range(0..5);
    format!("{a}+{b}={}", a + b)
}

/// Uniform over numbers of a uniformly drawn digit count, so short and long
/// numbers are equally common.
fn random_number(rng: &mut ChaCha8Rng, max_digits: u32) -> i64 {
    let digits = rng.gen_range(1..=max_digits);
    rng.gen_range(0..10i64.pow(digits))
}

const JSON_KEYS: &[&str] = &[
    "id", "name", "age", "city", "tag", "score", "ok", "lang", "year", "qty", "unit", "kind",
];
const JSON_WORDS: &[&str] = &[
    "oslo", "lima", "red", "blue", "alpha", "beta", "kiwi", "fig", "north", "delta", "rust", "go",
];

fn gen_jsonish(rng: &mut ChaCha8Rng, target: usize, max: usize) -> String {
    let mut body = String::new();
    while body.len() + 2 < target {
        let sep = usize::from(!body.is_empty());
        let room = max.saturating_sub(body.len() + 2 + sep);
        if room < 5 {
            break;
        }
        let pair = json_pair(rng, room);
        if sep == 1 {
            body.push(',');
        }
        body.push_str(&pair);
    }
    format!("{{{body}}}")
}

fn json_pair(rng: &mut ChaCha8Rng, room: usize) -> String {
    for _ in 0..16 {
        let key = JSON_KEYS.choose(rng).unwrap();
        let value = match rng.gen_range(0..3) {
            0 => random_number(rng, 4).to_string(),
            1 => format!("\"{}\"", JSON_WORDS.choose(rng).unwrap()),
            _ => if rng.gen() { "true" } else { "false" }.to_string(),
        };
        let pair = format!("\"{key}\":{value}");
        if pair.len() <= room {
            return pair;
        }
    }
    format!("\"n\":{}", rng.gen_range(0..10))
}

const ENGLISH_SEED: &str = "the river ran slowly past the old mill, and the miller watched \
the water turn the wheel as he had done every morning for thirty years. \
in the spring the fields beyond the bridge filled with yellow flowers, \
and children from the village came down to the bank to throw stones and \
count the ripples. nobody remembered who had built the mill or why it \
stood so far from the road, but everyone agreed that the bread it made \
was the best in the valley. when the autumn rains came the river rose \
and the wheel turned faster, and the miller sang to himself while he \
worked, a low song about the sea that he had never seen. ";

/// Order-2 character model over a fixed paragraph, treated as cyclic so
/// every context has a successor.
struct CharMarkov {
    starts: Vec<[u8; 2]>,
    next: HashMap<[u8; 2], Vec<u8>>,
}

impl CharMarkov {
    fn english() -> Self {
        let text = ENGLISH_SEED.as_bytes();
        let n = text.len();
        let mut next: HashMap<[u8; 2], Vec<u8>> = HashMap::new();
        let mut starts = Vec::with_capacity(n);
        for i in 0..n {
            let ctx = [text[i], text[(i + 1) % n]];
            starts.push(ctx);
            next.entry(ctx).or_default().push(text[(i + 2) % n]);
        }
        CharMarkov { starts, next }
    }

    fn generate(&self, rng: &mut ChaCha8Rng, len: usize) -> String {
        let mut out: Vec<u8> = self.starts.choose(rng).unwrap().to_vec();
        while out.len() < len {
            let ctx = [out[out.len() - 2], out[out.len() - 1]];
            out.push(*self.next[&ctx].choose(rng).unwrap());
        }
        out.truncate(len);
        String::from_utf8(out).expect("seed paragraph is ASCII")
    }
}
