//! Document ingestion and rule-based sentence segmentation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::text::count_tokens;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    /// Byte range into the owning document's text.
    pub span: Range<usize>,
    pub text: String,
}

/// Reads a JSONL corpus, one document per line. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_line(&line, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn parse_line(line: &str, line_no: usize) -> Result<Document> {
    let parse_err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    let field = |name: &str| -> Result<String> {
        match obj.get(name) {
            None => Err(parse_err(format!("missing field {name}"))),
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(parse_err(format!("field {name} must be a string"))),
        }
    };
    let doc = Document {
        id: field("id")?,
        title: field("title")?,
        source: field("source")?,
        text: field("text")?,
    };
    if doc.id.is_empty() {
        return Err(parse_err("empty id".into()));
    }
    if doc.text.is_empty() {
        return Err(parse_err("empty text".into()));
    }
    Ok(doc)
}

const ABBREVIATIONS: &[&str] = &[
    "al.", "approx.", "cf.", "dr.", "e.g.", "eq.", "etc.", "fig.", "figs.", "i.e.", "inc.", "mr.",
    "mrs.", "ms.", "no.", "nos.", "prof.", "ref.", "sec.", "st.", "vol.", "vs.",
];

fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits on `.`, `!` or `?` runs followed by whitespace and an uppercase letter
/// or digit, unless the word ending in `.` is a known abbreviation.
///
/// Spans are trimmed of surrounding whitespace; everything between spans is
/// whitespace, so the text is recoverable from spans and gaps.
pub fn split_sentences(doc: &Document) -> Vec<Sentence> {
    let text = doc.text.as_str();
    let mut spans: Vec<Range<usize>> = Vec::new();
    let mut start = match text.find(|c: char| !c.is_whitespace()) {
        Some(s) => s,
        None => {
            return vec![Sentence {
                doc_id: doc.id.clone(),
                index: 0,
                span: 0..text.len(),
                text: text.to_string(),
            }]
        }
    };

    let bytes = text.as_bytes();
    let mut i = start;
    while i < text.len() {
        let b = bytes[i];
        if !matches!(b, b'.' | b'!' | b'?') {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < text.len() && matches!(bytes[end], b'.' | b'!' | b'?') {
            end += 1;
        }
        let rest = &text[end..];
        let ws_len = rest.len() - rest.trim_start().len();
        let next = rest[ws_len..].chars().next();
        let boundary = ws_len > 0
            && next.is_some_and(|c| c.is_uppercase() || c.is_ascii_digit())
            && !(b == b'.' && end == i + 1 && ends_with_abbreviation(&text[start..end]));
        if boundary {
            spans.push(start..end);
            start = end + ws_len;
            i = start;
        } else {
            i = end;
        }
    }
    let tail = text[start..].trim_end();
    if !tail.is_empty() {
        spans.push(start..start + tail.len());
    }

    spans
        .into_iter()
        .enumerate()
        .map(|(index, span)| Sentence {
            doc_id: doc.id.clone(),
            index,
            text: text[span.clone()].to_string(),
            span,
        })
        .collect()
}

fn ends_with_abbreviation(sentence_so_far: &str) -> bool {
    sentence_so_far
        .split_whitespace()
        .next_back()
        .is_some_and(is_abbreviation)
}
