//! Exact brute-force cosine search over unit-norm embeddings.

use std::collections::HashSet;

use crate::chunking::Chunk;
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::retrieval::{sort_by_score, ScoreSource, ScoredChunk};

/// Chunks are embedded in batches of this many texts.
const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    dim: usize,
    fingerprint: String,
}

impl VectorStore {
    pub fn build(chunks: &[Chunk], embedder: &Embedder) -> Result<Self> {
        let mut vectors = Vec::with_capacity(chunks.len());
        for batch in chunks.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
            vectors.extend(embedder.embed(&texts)?);
        }
        let ids = chunks.iter().map(|c| c.id.clone()).collect();
        Self::from_parts(ids, vectors, embedder.spec().dim(), embedder.spec().fingerprint())
    }

    /// Validates and normalizes. Rows with zero norm are rejected.
    pub fn from_parts(
        ids: Vec<String>,
        vectors: Vec<EmbeddingVector>,
        dim: usize,
        fingerprint: String,
    ) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Corrupt(format!(
                "{} ids but {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Corrupt(format!("duplicate chunk id {id:?}")));
            }
        }
        let mut normalized = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            let norm = v.norm();
            if norm == 0.0 {
                return Err(Error::ZeroVector);
            }
            if (norm - 1.0).abs() > 1e-6 {
                normalized.push(EmbeddingVector::new(
                    v.values.iter().map(|&x| (f64::from(x) / norm) as f32).collect(),
                ));
            } else {
                normalized.push(v);
            }
        }
        Ok(VectorStore {
            ids,
            vectors: normalized,
            dim,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    /// Top-`top_k` by cosine, descending, ties by ascending chunk id.
    pub fn search_vector(&self, query: &EmbeddingVector, top_k: usize) -> Result<Vec<ScoredChunk>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(Error::ZeroVector);
        }
        let mut scored: Vec<ScoredChunk> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| {
                let cos = (v.dot(query) / qn).clamp(-1.0, 1.0);
                ScoredChunk::new(id, cos, ScoreSource::Vector)
            })
            .collect();
        sort_by_score(&mut scored);
        scored.truncate(top_k);
        Ok(scored)
    }

    pub fn search(&self, embedder: &Embedder, query: &str, top_k: usize) -> Result<Vec<ScoredChunk>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = embedder.embed_one(query)?;
        self.search_vector(&q, top_k)
    }
}
