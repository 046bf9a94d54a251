//! Text embeddings and cosine similarity.
//!
//! The reference embedder hashes lowercased character 3-grams (the text is
//! padded with one space on each side) and projects their counts through a
//! seed-derived ±1 matrix, then L2-normalizes. Text sharing many 3-grams lands
//! close together, which is all the pipeline tests need from an embedder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::{EmbedRequest, EmbedResponse, JsonClient};

pub const DEFAULT_DIM: usize = 384;
pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderSpec {
    Reference { dim: usize, seed: u64 },
    Remote { endpoint: String, dim: usize },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Reference {
            dim: DEFAULT_DIM,
            seed: 7,
        }
    }
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Reference { dim, .. } | EmbedderSpec::Remote { dim, .. } => *dim,
        }
    }

    /// Identifies the vector space; persisted indexes record it so that a
    /// query is never embedded into a different space than its store.
    pub fn fingerprint(&self) -> String {
        match self {
            EmbedderSpec::Reference { dim, seed } => format!("reference-3gram/dim={dim}/seed={seed}"),
            EmbedderSpec::Remote { endpoint, dim } => format!("remote/{endpoint}/dim={dim}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() < MIN_DIM {
            return Err(Error::InvalidArgument(format!(
                "embedding dim must be >= {MIN_DIM}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// An embedder bound to its spec. Cheap to clone and safe to share.
#[derive(Debug, Clone)]
pub struct Embedder {
    spec: EmbedderSpec,
    client: Option<JsonClient>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let client = match &spec {
            EmbedderSpec::Remote { endpoint, .. } => Some(JsonClient::new(endpoint)),
            EmbedderSpec::Reference { .. } => None,
        };
        Ok(Embedder { spec, client })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        match (&self.spec, &self.client) {
            (EmbedderSpec::Reference { dim, seed }, _) => {
                Ok(texts.iter().map(|t| reference_embed(t, *dim, *seed)).collect())
            }
            (EmbedderSpec::Remote { dim, .. }, Some(client)) => {
                embed_remote(client, texts, *dim)
            }
            (EmbedderSpec::Remote { .. }, None) => unreachable!("remote embedder without client"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

pub fn embed(texts: &[&str], spec: &EmbedderSpec) -> Result<Vec<EmbeddingVector>> {
    Embedder::new(spec.clone())?.embed(texts)
}

fn embed_remote(client: &JsonClient, texts: &[&str], dim: usize) -> Result<Vec<EmbeddingVector>> {
    let reply: EmbedResponse = client.post("embed", &EmbedRequest { texts })?;
    if reply.vectors.len() != texts.len() {
        return Err(Error::transport(
            &client.url("embed"),
            format!("expected {} vectors, got {}", texts.len(), reply.vectors.len()),
        ));
    }
    reply
        .vectors
        .into_iter()
        .map(|values| {
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::transport(&client.url("embed"), "non-finite vector value"));
            }
            Ok(EmbeddingVector::new(values))
        })
        .collect()
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counts of each hashed 3-gram. Ordered so projection sums in a fixed order.
pub(crate) fn trigram_counts(text: &str) -> BTreeMap<u64, u32> {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut counts = BTreeMap::new();
    let mut buf = [0u8; 12];
    for w in padded.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        *counts.entry(fnv1a(&buf[..len])).or_insert(0) += 1;
    }
    counts
}

fn reference_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    let seed_key = splitmix64(seed);
    let mut acc = vec![0f64; dim];
    for (hash, count) in trigram_counts(text) {
        let row = hash ^ seed_key;
        let count = f64::from(count);
        for (block, chunk) in acc.chunks_mut(64).enumerate() {
            let bits = splitmix64(row.wrapping_add(block as u64).wrapping_mul(0xd134_2543_de82_ef95));
            for (j, slot) in chunk.iter_mut().enumerate() {
                if bits >> j & 1 == 1 {
                    *slot += count;
                } else {
                    *slot -= count;
                }
            }
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    // A projection can cancel to zero only by coincidence; keep a direction.
    let values = if norm == 0.0 {
        let mut v = vec![0f32; dim];
        v[0] = 1.0;
        v
    } else {
        acc.iter().map(|v| (v / norm) as f32).collect()
    };
    EmbeddingVector::new(values)
}
