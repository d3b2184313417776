//! Likelihood-ratio selection scores: each record is scored under the frozen
//! model with and without the domain prefix, and kept when the log-ratio
//! exceeds `ln τ`.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    encode, fmt_f64, is_provenance_line, json_string, read_corpus, write_scores_with_header,
    CorpusRecord,
};
use crate::error::{Error, Result};
use crate::prefix::DomainPrefix;
use crate::tiny_lm::{check_prefix, log_likelihood_masked, LmParams, VocabMask};

/// Records read and scored per parallel batch in [`score_stream`].
const STREAM_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub log_p_base: f64,
    pub log_p_cond: f64,
    pub log_ratio: f64,
    pub tokens_scored: usize,
    pub selected: bool,
    pub truncated: bool,
}

impl ScoreRecord {
    /// Canonical JSONL encoding: fixed key order, floats with 17
    /// significant digits.
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"id\":{},\"log_p_base\":{},\"log_p_cond\":{},\"log_ratio\":{},\"tokens_scored\":{},\"selected\":{},\"truncated\":{}}}",
            json_string(&self.id),
            fmt_f64(self.log_p_base),
            fmt_f64(self.log_p_cond),
            fmt_f64(self.log_ratio),
            self.tokens_scored,
            self.selected,
            self.truncated,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    SequenceSum,
    PerTokenMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Likelihood-ratio threshold; compared as `log_ratio > ln(tau)`.
    pub tau: f64,
    pub normalization: Normalization,
    pub include_truncated: bool,
    pub workers: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            tau: 1.0,
            normalization: Normalization::SequenceSum,
            include_truncated: true,
            workers: 1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau must be a finite value > 0 (got {})", self.tau));
        }
        if self.workers < 1 {
            errs.push("workers must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn log_tau(&self) -> f64 {
        self.tau.ln()
    }

    /// The selection rule applied to an already computed log-ratio.
    pub fn accepts(&self, log_ratio: f64, truncated: bool) -> bool {
        log_ratio > self.log_tau() && (self.include_truncated || !truncated)
    }
}

/// Scores records against a frozen model and prefix, counting forward passes.
pub struct Scorer<'a> {
    params: &'a LmParams,
    prefix: &'a DomainPrefix,
    cfg: SelectionConfig,
    mask: Option<VocabMask>,
    forward_passes: AtomicU64,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a LmParams, prefix: &'a DomainPrefix, cfg: SelectionConfig) -> Result<Self> {
        cfg.validate()?;
        check_prefix(params, prefix)?;
        Ok(Scorer {
            params,
            prefix,
            cfg,
            mask: None,
            forward_passes: AtomicU64::new(0),
        })
    }

    /// Restricts both likelihoods to a vocabulary subset.
    pub fn with_mask(mut self, mask: VocabMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.cfg
    }

    /// Total forward passes run so far.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    fn ll(&self, prefix: Option<&DomainPrefix>, seq: &crate::corpus::TokenSequence) -> Result<f64> {
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        log_likelihood_masked(self.params, prefix, seq, self.mask.as_ref())
    }

    pub fn score(&self, record: &CorpusRecord) -> Result<ScoreRecord> {
        let seq = encode(record.text.as_bytes(), self.params.config.context_len);
        let tokens = seq.predicted();
        let cond = self.ll(Some(self.prefix), &seq)?;
        let base = self.ll(None, &seq)?;
        let (log_p_cond, log_p_base) = match self.cfg.normalization {
            Normalization::SequenceSum => (cond, base),
            Normalization::PerTokenMean => (cond / tokens as f64, base / tokens as f64),
        };
        let log_ratio = log_p_cond - log_p_base;
        Ok(ScoreRecord {
            id: record.id.clone(),
            log_p_base,
            log_p_cond,
            log_ratio,
            tokens_scored: tokens,
            selected: self.cfg.accepts(log_ratio, seq.truncated),
            truncated: seq.truncated,
        })
    }

    /// Scores a slice on the current rayon pool, preserving input order.
    pub fn score_all(&self, records: &[CorpusRecord]) -> Result<Vec<ScoreRecord>> {
        records
            .par_iter()
            .map(|r| {
                self.score(r).map_err(|e| Error::Record {
                    id: r.id.clone(),
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

pub fn score_record(
    params: &LmParams,
    prefix: &DomainPrefix,
    record: &CorpusRecord,
    cfg: &SelectionConfig,
) -> Result<ScoreRecord> {
    Scorer::new(params, prefix, cfg.clone())?.score(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub scored: usize,
    pub selected: usize,
    /// Absent when nothing was scored.
    pub mean_log_ratio: Option<f64>,
    pub forward_passes: u64,
}

pub fn score_stream(
    params: &LmParams,
    prefix: &DomainPrefix,
    corpus_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    cfg: &SelectionConfig,
) -> Result<ScoreSummary> {
    score_stream_with_header(params, prefix, corpus_path, out_path, cfg, None)
}

pub(crate) fn score_stream_with_header(
    params: &LmParams,
    prefix: &DomainPrefix,
    corpus_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    cfg: &SelectionConfig,
    header: Option<&str>,
) -> Result<ScoreSummary> {
    let scorer = Scorer::new(params, prefix, cfg.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Argument(format!("cannot build worker pool: {e}")))?;

    // Score everything before touching the output so errors leave no partial file.
    let mut reader = read_corpus(corpus_path)?;
    let mut scores = Vec::new();
    loop {
        let chunk: Vec<CorpusRecord> = reader
            .by_ref()
            .take(STREAM_CHUNK)
            .collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        scores.extend(pool.install(|| scorer.score_all(&chunk))?);
    }

    let summary = summarize(&scores, scorer.forward_passes());
    write_scores_with_header(out_path, header, scores)?;
    Ok(summary)
}

fn summarize(scores: &[ScoreRecord], forward_passes: u64) -> ScoreSummary {
    let scored = scores.len();
    let mean_log_ratio = (scored > 0)
        .then(|| scores.iter().map(|s| s.log_ratio).sum::<f64>() / scored as f64);
    ScoreSummary {
        scored,
        selected: scores.iter().filter(|s| s.selected).count(),
        mean_log_ratio,
        forward_passes,
    }
}

/// Parses a score file, skipping an optional provenance line.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || (i == 0 && is_provenance_line(&line)) {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ids: Vec<String>,
    pub total: usize,
    /// Fraction of scored records selected; 0 for an empty file.
    pub retention: f64,
}

/// Applies the threshold rule to precomputed scores, in input order.
pub fn select_scores(scores: &[ScoreRecord], cfg: &SelectionConfig) -> Selection {
    let ids: Vec<String> = scores
        .iter()
        .filter(|s| cfg.accepts(s.log_ratio, s.truncated))
        .map(|s| s.id.clone())
        .collect();
    let retention = if scores.is_empty() {
        0.0
    } else {
        ids.len() as f64 / scores.len() as f64
    };
    Selection {
        ids,
        total: scores.len(),
        retention,
    }
}

pub fn select(scores_path: impl AsRef<Path>, cfg: &SelectionConfig) -> Result<Selection> {
    cfg.validate()?;
    Ok(select_scores(&read_scores(scores_path)?, cfg))
}
