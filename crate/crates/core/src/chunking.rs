//! Semantic and fixed-size chunking over sentence units.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_sentences, Document, Sentence};
use crate::embedding::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::text::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkStrategy {
    Semantic,
    Fixed,
}

/// One line of the chunk dump: `{"id","doc_id","first","last","text","tokens","strategy"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    /// First sentence index, inclusive.
    pub first: usize,
    /// Last sentence index, inclusive.
    pub last: usize,
    pub text: String,
    #[serde(rename = "tokens")]
    pub token_count: usize,
    pub strategy: ChunkStrategy,
}

impl Chunk {
    fn from_sentences(
        doc: &Document,
        sentences: &[Sentence],
        ordinal: usize,
        first: usize,
        last: usize,
        strategy: ChunkStrategy,
    ) -> Chunk {
        let text = doc.text[sentences[first].span.start..sentences[last].span.end].to_string();
        Chunk {
            id: format!("{}#{}", doc.id, ordinal),
            doc_id: doc.id.clone(),
            first,
            last,
            token_count: count_tokens(&text),
            text,
            strategy,
        }
    }

    /// True when both chunks come from the same document and share a sentence.
    pub fn overlaps(&self, other: &Chunk) -> bool {
        self.doc_id == other.doc_id && self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticChunkConfig {
    pub breakpoint_percentile: f64,
    pub buffer_size: usize,
}

impl Default for SemanticChunkConfig {
    fn default() -> Self {
        SemanticChunkConfig {
            breakpoint_percentile: 90.0,
            buffer_size: 3,
        }
    }
}

impl SemanticChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.breakpoint_percentile > 0.0 && self.breakpoint_percentile < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "breakpoint_percentile must be in (0, 100), got {}",
                self.breakpoint_percentile
            )));
        }
        if self.buffer_size == 0 {
            return Err(Error::InvalidArgument("buffer_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Percentile with linear interpolation between closest ranks
/// (rank = p/100 · (n − 1)). `values` must be non-empty.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Cosine dissimilarities between consecutive stride-1 windows of
/// `buffer_size` sentences. Entry `i` compares window `i` with window `i + 1`.
pub fn window_dissimilarities(
    sentences: &[Sentence],
    buffer_size: usize,
    embedder: &Embedder,
) -> Result<Vec<f64>> {
    if sentences.len() <= buffer_size {
        return Ok(Vec::new());
    }
    let windows: Vec<String> = sentences
        .windows(buffer_size)
        .map(|w| {
            w.iter()
                .map(|s| s.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let refs: Vec<&str> = windows.iter().map(String::as_str).collect();
    let vectors = embedder.embed(&refs)?;
    vectors
        .windows(2)
        .map(|pair| Ok(1.0 - cosine_similarity(&pair[0], &pair[1])?))
        .collect()
}

/// Sentence indices after which a semantic chunk ends (the final sentence is
/// implicit). A break is placed where `d_i` strictly exceeds the percentile
/// threshold, at the sentence in the middle of the two compared windows.
pub fn semantic_breakpoints(dissimilarities: &[f64], cfg: &SemanticChunkConfig) -> Vec<usize> {
    if dissimilarities.is_empty() {
        return Vec::new();
    }
    let threshold = percentile(dissimilarities, cfg.breakpoint_percentile);
    let offset = cfg.buffer_size / 2;
    dissimilarities
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > threshold)
        .map(|(i, _)| i + offset)
        .collect()
}

pub fn semantic_chunk(
    doc: &Document,
    cfg: &SemanticChunkConfig,
    embedder: &Embedder,
) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let sentences = split_sentences(doc);
    let d = window_dissimilarities(&sentences, cfg.buffer_size, embedder)?;
    let breaks = semantic_breakpoints(&d, cfg);

    let mut chunks = Vec::with_capacity(breaks.len() + 1);
    let mut first = 0;
    for end in breaks.into_iter().chain(std::iter::once(sentences.len() - 1)) {
        chunks.push(Chunk::from_sentences(
            doc,
            &sentences,
            chunks.len(),
            first,
            end,
            ChunkStrategy::Semantic,
        ));
        first = end + 1;
    }
    Ok(chunks)
}

/// Greedy whole-sentence packing. Each new chunk repeats the shortest run of
/// trailing sentences from the previous chunk holding at least
/// `overlap_tokens`, trimmed from the front if needed so the next unseen
/// sentence still fits.
pub fn fixed_chunk(doc: &Document, chunk_tokens: usize, overlap_tokens: usize) -> Result<Vec<Chunk>> {
    if chunk_tokens <= overlap_tokens {
        return Err(Error::InvalidArgument(format!(
            "chunk_tokens ({chunk_tokens}) must exceed overlap_tokens ({overlap_tokens})"
        )));
    }
    let sentences = split_sentences(doc);
    let sizes: Vec<usize> = sentences.iter().map(|s| count_tokens(&s.text)).collect();

    let mut chunks = Vec::new();
    let mut first = 0;
    let mut total = 0;
    let mut next = 0;
    while next < sentences.len() {
        if next == first || total + sizes[next] <= chunk_tokens {
            total += sizes[next];
            next += 1;
            continue;
        }
        let last = next - 1;
        chunks.push(Chunk::from_sentences(
            doc,
            &sentences,
            chunks.len(),
            first,
            last,
            ChunkStrategy::Fixed,
        ));

        // Shortest strict suffix of [first, last] reaching the overlap.
        let mut carry_start = last + 1;
        let mut carry = 0;
        while carry < overlap_tokens && carry_start > first + 1 {
            carry_start -= 1;
            carry += sizes[carry_start];
        }
        while carry_start <= last && carry + sizes[next] > chunk_tokens {
            carry -= sizes[carry_start];
            carry_start += 1;
        }
        first = carry_start;
        total = carry;
    }
    if !sentences.is_empty() {
        chunks.push(Chunk::from_sentences(
            doc,
            &sentences,
            chunks.len(),
            first,
            sentences.len() - 1,
            ChunkStrategy::Fixed,
        ));
    }
    Ok(chunks)
}

pub fn semantic_chunk_corpus(
    docs: &[Document],
    cfg: &SemanticChunkConfig,
    embedder: &Embedder,
) -> Result<Vec<Chunk>> {
    let per_doc: Vec<Vec<Chunk>> = docs
        .par_iter()
        .map(|d| semantic_chunk(d, cfg, embedder))
        .collect::<Result<_>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

pub fn fixed_chunk_corpus(
    docs: &[Document],
    chunk_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<Chunk>> {
    let per_doc: Vec<Vec<Chunk>> = docs
        .par_iter()
        .map(|d| fixed_chunk(d, chunk_tokens, overlap_tokens))
        .collect::<Result<_>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

pub fn write_chunks(path: impl AsRef<Path>, chunks: &[Chunk]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for c in chunks {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_chunks(path: impl AsRef<Path>) -> Result<Vec<Chunk>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(chunk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbedderSpec;

    fn doc(text: &str) -> Document {
        Document {
            id: "d".into(),
            title: String::new(),
            source: String::new(),
            text: text.into(),
        }
    }

    fn embedder() -> Embedder {
        Embedder::new(EmbedderSpec::default()).unwrap()
    }

    fn ranges(chunks: &[Chunk]) -> Vec<(usize, usize)> {
        chunks.iter().map(|c| (c.first, c.last)).collect()
    }

    /// Five sentences of exactly ten tokens each.
    fn ten_token_doc() -> Document {
        let s = |i: usize| format!("Sentence {i} has words that count to exactly ten.");
        doc(&(0..5).map(s).collect::<Vec<_>>().join(" "))
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 90.0) - 4.6).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 90.0), 7.0);
    }

    #[test]
    fn single_sentence_is_one_chunk() {
        let d = doc("Only one sentence here.");
        let chunks = semantic_chunk(&d, &SemanticChunkConfig::default(), &embedder()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, d.text);
        assert_eq!(chunks[0].id, "d#0");
    }

    #[test]
    fn identical_windows_give_one_chunk() {
        let text = ["The same sentence repeats."; 12].join(" ");
        let chunks = semantic_chunk(&doc(&text), &SemanticChunkConfig::default(), &embedder()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(ranges(&chunks), vec![(0, 11)]);
    }

    #[test]
    fn fewer_sentences_than_buffer() {
        let chunks = semantic_chunk(&doc("One. Two."), &SemanticChunkConfig::default(), &embedder()).unwrap();
        assert_eq!(ranges(&chunks), vec![(0, 1)]);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SemanticChunkConfig {
            breakpoint_percentile: 100.0,
            buffer_size: 3,
        };
        assert!(semantic_chunk(&doc("A."), &bad, &embedder()).is_err());
    }

    #[test]
    fn fixed_packing() {
        let d = ten_token_doc();
        assert!(split_sentences(&d).iter().all(|s| count_tokens(&s.text) == 10));
        assert_eq!(ranges(&fixed_chunk(&d, 30, 0).unwrap()), vec![(0, 2), (3, 4)]);
        assert_eq!(ranges(&fixed_chunk(&d, 30, 10).unwrap()), vec![(0, 2), (2, 4)]);
        assert_eq!(ranges(&fixed_chunk(&d, 500, 0).unwrap()), vec![(0, 4)]);
        assert!(fixed_chunk(&d, 10, 10).is_err());
    }

    #[test]
    fn oversized_sentence_stands_alone() {
        let d = doc("Tiny one. This sentence is far longer than the limit allows here. Short again.");
        let chunks = fixed_chunk(&d, 5, 2).unwrap();
        assert_eq!(ranges(&chunks), vec![(0, 0), (1, 1), (2, 2)]);
        assert!(chunks.iter().all(|c| c.token_count == count_tokens(&c.text)));
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chunks.jsonl");
        let chunks = fixed_chunk(&ten_token_doc(), 30, 10).unwrap();
        write_chunks(&path, &chunks).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["doc_id", "first", "id", "last", "strategy", "text", "tokens"]);
        assert_eq!(first["strategy"], "fixed");
        assert_eq!(read_chunks(&path).unwrap(), chunks);
    }
}
