//! Byte-level tokenization and JSONL corpus / score-file I/O.
//!
//! Corpus files hold one `{"id", "text", "label"?}` object per line. Files
//! written by the CLI may start with a single provenance line of the form
//! `{"_provenance": {...}}`; readers skip it.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreRecord;

/// 256 byte values plus BOS and EOS.
pub const VOCAB_SIZE: usize = 258;
pub const BOS: u32 = 256;
pub const EOS: u32 = 257;

/// Key of the optional first-line provenance object in JSONL outputs.
pub const PROVENANCE_KEY: &str = "_provenance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        CorpusRecord {
            id: id.into(),
            text: text.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

impl TokenSequence {
    /// Number of predicted positions (every token after BOS).
    pub fn predicted(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }
}

/// `[BOS] ++ text[..context_len] ++ [EOS]`, with EOS dropped when the text
/// had to be cut.
pub fn encode(text: &[u8], context_len: usize) -> TokenSequence {
    let truncated = text.len() > context_len;
    let kept = &text[..text.len().min(context_len)];
    let mut ids = Vec::with_capacity(kept.len() + 2);
    ids.push(BOS);
    ids.extend(kept.iter().map(|&b| b as u32));
    if !truncated {
        ids.push(EOS);
    }
    TokenSequence { ids, truncated }
}

pub fn decode(seq: &TokenSequence) -> Result<Vec<u8>> {
    let (first, rest) = seq
        .ids
        .split_first()
        .ok_or_else(|| Error::Framing("empty sequence".into()))?;
    if *first != BOS {
        return Err(Error::Framing(format!("expected BOS, found token {first}")));
    }
    let body = match rest.split_last() {
        Some((&EOS, body)) => body,
        _ if seq.truncated => rest,
        _ => return Err(Error::Framing("missing EOS on complete sequence".into())),
    };
    body.iter()
        .enumerate()
        .map(|(i, &t)| {
            u8::try_from(t)
                .map_err(|_| Error::Framing(format!("control token {t} inside text at {}", i + 1)))
        })
        .collect()
}

/// Streaming reader over a JSONL corpus; validates id uniqueness.
pub struct CorpusReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    seen: HashSet<String>,
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<CorpusReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(CorpusReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        seen: HashSet::new(),
    })
}

/// Reads a whole corpus into memory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    read_corpus(path)?.collect()
}

impl Iterator for CorpusReader {
    type Item = Result<CorpusRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            if self.line_no == 1 && is_provenance_line(&line) {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message,
            };
            let rec: CorpusRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Some(Err(parse_err(e.to_string()))),
            };
            if rec.id.is_empty() {
                return Some(Err(parse_err("empty id".into())));
            }
            if !self.seen.insert(rec.id.clone()) {
                return Some(Err(Error::DuplicateId {
                    path: self.path.clone(),
                    id: rec.id,
                    line: self.line_no,
                }));
            }
            return Some(Ok(rec));
        }
    }
}

pub(crate) fn is_provenance_line(line: &str) -> bool {
    matches!(
        serde_json::from_str::<serde_json::Value>(line),
        Ok(serde_json::Value::Object(map)) if map.contains_key(PROVENANCE_KEY)
    )
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_corpus<'a, I>(path: impl AsRef<Path>, records: I) -> Result<usize>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    write_corpus_with_header(path, None, records)
}

pub(crate) fn write_corpus_with_header<'a, I>(
    path: impl AsRef<Path>,
    header: Option<&str>,
    records: I,
) -> Result<usize>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    if let Some(h) = header {
        writeln!(out, "{h}").map_err(io)?;
    }
    let mut n = 0;
    for rec in records {
        let line = serde_json::to_string(rec).expect("corpus records always serialize");
        writeln!(out, "{line}").map_err(io)?;
        n += 1;
    }
    out.flush().map_err(io)?;
    Ok(n)
}

/// Writes one score object per line in input order; returns the count.
pub fn write_scores<I>(path: impl AsRef<Path>, records: I) -> Result<usize>
where
    I: IntoIterator<Item = ScoreRecord>,
{
    write_scores_with_header(path, None, records)
}

pub(crate) fn write_scores_with_header<I>(
    path: impl AsRef<Path>,
    header: Option<&str>,
    records: I,
) -> Result<usize>
where
    I: IntoIterator<Item = ScoreRecord>,
{
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    if let Some(h) = header {
        writeln!(out, "{h}").map_err(io)?;
    }
    let mut n = 0;
    for rec in records {
        writeln!(out, "{}", rec.to_json_line()).map_err(io)?;
        n += 1;
    }
    out.flush().map_err(io)?;
    Ok(n)
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // JSON has no encoding for these; they never reach score files.
        "null".to_string()
    }
}

pub(crate) fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        let s = encode(b"", 128);
        assert_eq!(s.ids, vec![BOS, EOS]);
        assert!(!s.truncated);

        let s = encode(b"ab", 128);
        assert_eq!(s.ids, vec![256, 97, 98, 257]);
        assert!(!s.truncated);

        let s = encode(&[b'x'; 200], 128);
        assert_eq!(s.ids.len(), 129);
        assert!(s.truncated);
        assert_eq!(s.ids[0], BOS);
        assert!(s.ids[1..].iter().all(|&t| t == b'x' as u32));
    }

    #[test]
    fn encode_exact_fit_is_not_truncated() {
        let s = encode(&[b'y'; 4], 4);
        assert_eq!(s.ids.len(), 6);
        assert!(!s.truncated);
    }

    #[test]
    fn decode_examples() {
        let ab = TokenSequence {
            ids: vec![BOS, 97, 98, EOS],
            truncated: false,
        };
        assert_eq!(decode(&ab).unwrap(), b"ab");
        let empty = TokenSequence {
            ids: vec![BOS, EOS],
            truncated: false,
        };
        assert_eq!(decode(&empty).unwrap(), b"");
        let bad = TokenSequence {
            ids: vec![97],
            truncated: false,
        };
        assert!(matches!(decode(&bad), Err(Error::Framing(_))));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(bytes in proptest::collection::vec(any::<u8>(), 0..64), extra in 0usize..8) {
            let ctx = bytes.len() + extra;
            let seq = encode(&bytes, ctx);
            prop_assert!(!seq.truncated);
            prop_assert_eq!(decode(&seq).unwrap(), bytes);
        }

        #[test]
        fn encode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..96), ctx in 0usize..64) {
            let seq = encode(&bytes, ctx);
            prop_assert_eq!(seq.ids[0], BOS);
            prop_assert!(seq.ids.len() <= ctx + 2);
            prop_assert!(seq.ids.iter().all(|&t| (t as usize) < VOCAB_SIZE));
            prop_assert!(seq.ids[1..].iter().filter(|&&t| t == BOS).count() == 0);
            prop_assert_eq!(seq.truncated, bytes.len() > ctx);
            prop_assert_eq!(*seq.ids.last().unwrap() == EOS, !seq.truncated);
            prop_assert!(decode(&seq).is_ok());
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn reads_records_in_order() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x"}"#,
            r#"{"id":"b","text":"y","label":"arith"}"#,
            r#"{"id":"c","text":""}"#,
        ]);
        let recs = load_corpus(f.path()).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(recs[1].label.as_deref(), Some("arith"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[r#"{"id":"a","text":"x"}"#, "{not json", r#"{"id":"c","text":""}"#]);
        match load_corpus(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_lines(&[
            r#"{"id":"a","text":"1"}"#,
            r#"{"id":"b","text":"2"}"#,
            r#"{"id":"c","text":"3"}"#,
            r#"{"id":"d","text":"4"}"#,
            r#"{"id":"a","text":"5"}"#,
        ]);
        match load_corpus(f.path()) {
            Err(Error::DuplicateId { id, line, .. }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 5);
            }
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn provenance_line_is_skipped() {
        let f = write_lines(&[r#"{"_provenance":{"config_hash":"x"}}"#, r#"{"id":"a","text":"x"}"#]);
        assert_eq!(load_corpus(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn corpus_roundtrip_is_byte_stable() {
        let f = write_lines(&[
            r#"{"id":"a","text":"x \"q\"","label":"l"}"#,
            r#"{"id":"b","text":"é"}"#,
        ]);
        let recs = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(out.path(), &recs).unwrap();
        let again = load_corpus(out.path()).unwrap();
        assert_eq!(recs, again);
        let out2 = tempfile::NamedTempFile::new().unwrap();
        write_corpus(out2.path(), &again).unwrap();
        assert_eq!(
            std::fs::read(out.path()).unwrap(),
            std::fs::read(out2.path()).unwrap()
        );
    }

    #[test]
    fn float_format_roundtrips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456.789, -0.0] {
            let s = fmt_f64(x);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
