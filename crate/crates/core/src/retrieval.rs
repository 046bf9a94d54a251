//! Two-stage retrieval: hybrid keyword/vector union, rerank, then pad the
//! context from the fixed-size index up to a token budget.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chunking::Chunk;
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::eval::McqItem;
use crate::indexing::SearchIndex;
use crate::remote::{JsonClient, ScoreRequest, ScoreResponse};
use crate::text::content_terms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Keyword,
    Vector,
    Reranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
    pub source: ScoreSource,
}

impl ScoredChunk {
    pub fn new(chunk_id: &str, score: f64, source: ScoreSource) -> Self {
        ScoredChunk {
            chunk_id: chunk_id.to_string(),
            score,
            source,
        }
    }
}

/// Score descending, then chunk id ascending.
pub fn sort_by_score(items: &mut [ScoredChunk]) {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    /// Fetched from each first-stage retriever before the union.
    pub k_first_stage: usize,
    pub k_final: usize,
    pub min_context_tokens: usize,
    pub include_options_in_query: bool,
    /// On reranker transport failure, keep first-stage order instead of failing.
    pub rerank_fallback: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_first_stage: 150,
            k_final: 15,
            min_context_tokens: 2600,
            include_options_in_query: false,
            rerank_fallback: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_final == 0 || self.k_final > self.k_first_stage {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k_final ({}) <= k_first_stage ({})",
                self.k_final, self.k_first_stage
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RerankerSpec {
    #[default]
    Reference,
    Remote { endpoint: String },
}

/// Pairwise (query, passage) scorer with scores in `[0, 1]`.
#[derive(Debug, Clone)]
pub enum Reranker {
    /// Fraction of the query's content terms found in the passage.
    Reference,
    Remote(JsonClient),
}

impl Reranker {
    pub fn new(spec: &RerankerSpec) -> Self {
        match spec {
            RerankerSpec::Reference => Reranker::Reference,
            RerankerSpec::Remote { endpoint } => Reranker::Remote(JsonClient::new(endpoint)),
        }
    }

    pub fn score(&self, query: &str, passages: &[&str]) -> Result<Vec<f64>> {
        match self {
            Reranker::Reference => {
                let q = content_terms(query);
                Ok(passages
                    .iter()
                    .map(|p| {
                        if q.is_empty() {
                            return 0.0;
                        }
                        let c = content_terms(p);
                        let shared = q.iter().filter(|t| c.contains(*t)).count();
                        (shared as f64 / q.len() as f64).clamp(0.0, 1.0)
                    })
                    .collect())
            }
            Reranker::Remote(client) => {
                let reply: ScoreResponse = client.post("score", &ScoreRequest { query, passages })?;
                if reply.scores.len() != passages.len() {
                    return Err(Error::transport(
                        &client.url("score"),
                        format!("expected {} scores, got {}", passages.len(), reply.scores.len()),
                    ));
                }
                if let Some(bad) = reply.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                    return Err(Error::transport(&client.url("score"), format!("score {bad} outside [0, 1]")));
                }
                Ok(reply.scores)
            }
        }
    }
}

/// Interleaves two ranked lists (vector rank 1, keyword rank 1, vector rank 2,
/// ...), keeping each chunk at its earliest position with its originating
/// source and score.
pub fn hybrid_merge(vector: &[ScoredChunk], keyword: &[ScoredChunk]) -> Vec<ScoredChunk> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(vector.len() + keyword.len());
    for i in 0..vector.len().max(keyword.len()) {
        for hit in [vector.get(i), keyword.get(i)].into_iter().flatten() {
            if seen.insert(hit.chunk_id.as_str()) {
                out.push(hit.clone());
            }
        }
    }
    out
}

/// Union of the top-`k` BM25 and top-`k` cosine hits.
pub fn hybrid_search(index: &SearchIndex, embedder: &Embedder, query: &str, k: usize) -> Result<Vec<ScoredChunk>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let keyword = index.bm25.search(query, k);
    let vector = index.vectors.search(embedder, query, k)?;
    Ok(hybrid_merge(&vector, &keyword))
}

/// Scores every candidate against `query` and keeps the best `k_final`.
pub fn rerank(
    query: &str,
    candidates: &[ScoredChunk],
    index: &SearchIndex,
    reranker: &Reranker,
    k_final: usize,
) -> Result<Vec<ScoredChunk>> {
    let texts = candidates
        .iter()
        .map(|c| {
            index
                .chunk(&c.chunk_id)
                .map(|ch| ch.text.as_str())
                .ok_or_else(|| Error::UnknownChunk(c.chunk_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = reranker.score(query, &texts)?;
    let mut out: Vec<ScoredChunk> = candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| ScoredChunk::new(&c.chunk_id, s, ScoreSource::Reranked))
        .collect();
    sort_by_score(&mut out);
    out.truncate(k_final);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub chunk: Chunk,
    pub score: ScoredChunk,
    /// Added by budget padding rather than selected by the main pipeline.
    pub padded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entries: Vec<BundleEntry>,
    pub total_tokens: usize,
}

impl ContextBundle {
    pub fn new(entries: Vec<BundleEntry>) -> Self {
        let total_tokens = entries.iter().map(|e| e.chunk.token_count).sum();
        ContextBundle { entries, total_tokens }
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.chunk.id.clone()).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.chunk.text.as_str()).collect()
    }

    /// Keeps only the first `n` entries.
    pub fn truncated(mut self, n: usize) -> Self {
        self.entries.truncate(n);
        Self::new(self.entries)
    }
}

/// Appends non-overlapping hybrid hits from the fixed-size index until the
/// selection holds at least `min_context_tokens`, or candidates run out.
pub fn pad_context(
    mut selected: Vec<BundleEntry>,
    fixed: &SearchIndex,
    embedder: &Embedder,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<Vec<BundleEntry>> {
    let mut total: usize = selected.iter().map(|e| e.chunk.token_count).sum();
    if total >= cfg.min_context_tokens || fixed.is_empty() {
        return Ok(selected);
    }
    for candidate in hybrid_search(fixed, embedder, query, cfg.k_first_stage.max(1))? {
        if total >= cfg.min_context_tokens {
            break;
        }
        let chunk = fixed
            .chunk(&candidate.chunk_id)
            .ok_or_else(|| Error::UnknownChunk(candidate.chunk_id.clone()))?;
        if selected.iter().any(|e| e.chunk.overlaps(chunk)) {
            continue;
        }
        total += chunk.token_count;
        selected.push(BundleEntry {
            chunk: chunk.clone(),
            score: candidate,
            padded: true,
        });
    }
    Ok(selected)
}

/// The indexes `retrieve` draws on. `primary` is the semantic or fixed index
/// depending on the chunking ablation; `padding` is always fixed-size.
#[derive(Debug, Clone, Copy)]
pub struct Indexes<'a> {
    pub primary: Option<&'a SearchIndex>,
    pub padding: Option<&'a SearchIndex>,
    pub embedder: &'a Embedder,
}

/// The retrieval query: the stem alone unless options are explicitly included.
pub fn retrieval_query(question: &McqItem, cfg: &RetrievalConfig) -> String {
    if cfg.include_options_in_query {
        let mut q = question.question.clone();
        for o in &question.options {
            q.push(' ');
            q.push_str(o);
        }
        q
    } else {
        question.question.clone()
    }
}

/// hybrid → rerank (or the first `k_final` hybrid hits when `reranker` is
/// `None`) → pad.
pub fn retrieve(
    question: &McqItem,
    indexes: &Indexes<'_>,
    cfg: &RetrievalConfig,
    reranker: Option<&Reranker>,
) -> Result<ContextBundle> {
    cfg.validate()?;
    let Some(primary) = indexes.primary.filter(|i| !i.is_empty()) else {
        return Ok(ContextBundle::default());
    };
    let query = retrieval_query(question, cfg);
    let candidates = hybrid_search(primary, indexes.embedder, &query, cfg.k_first_stage)?;
    let ranked = match reranker {
        None => candidates.into_iter().take(cfg.k_final).collect(),
        Some(_) if candidates.is_empty() => Vec::new(),
        Some(r) => match rerank(&query, &candidates, primary, r, cfg.k_final) {
            Ok(ranked) => ranked,
            Err(Error::Transport { .. }) if cfg.rerank_fallback => {
                candidates.into_iter().take(cfg.k_final).collect()
            }
            Err(e) => return Err(e),
        },
    };
    let selected = ranked
        .into_iter()
        .map(|s| {
            let chunk = primary
                .chunk(&s.chunk_id)
                .ok_or_else(|| Error::UnknownChunk(s.chunk_id.clone()))?
                .clone();
            Ok(BundleEntry {
                chunk,
                score: s,
                padded: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = match indexes.padding {
        Some(fixed) => pad_context(selected, fixed, indexes.embedder, &query, cfg)?,
        None => selected,
    };
    Ok(ContextBundle::new(entries))
}
