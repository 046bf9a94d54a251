//! First-stage indexes and their on-disk layout.
//!
//! An index directory holds:
//!
//! - `manifest.json`: `{version, dim, counts, embedder, k1, b, chunk_ids, checksums}`
//! - `vectors.bin`: little-endian `f32`, row-major, rows in `chunk_ids` order
//! - `postings.jsonl`: one term per line, `{"t": str, "p": [[chunk_id, tf]]}`
//! - `chunks.jsonl`: the chunk dump the index was built from
//!
//! Files are written to a temporary name and renamed into place; the manifest
//! goes last, so a directory with a manifest is complete.

mod bm25;
mod vector;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use bm25::{idf, tf_factor, Bm25Index, Bm25Params};
pub use vector::VectorStore;

use crate::chunking::Chunk;
use crate::embedding::{Embedder, EmbedderSpec, EmbeddingVector};
use crate::error::{Error, Result};

pub const INDEX_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const VECTORS: &str = "vectors.bin";
const POSTINGS: &str = "postings.jsonl";
const CHUNKS: &str = "chunks.jsonl";

/// The chunks of one strategy with both first-stage indexes over them.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
    pub bm25: Bm25Index,
    pub vectors: VectorStore,
}

impl SearchIndex {
    pub fn build(chunks: Vec<Chunk>, params: Bm25Params, embedder: &Embedder) -> Result<Self> {
        let bm25 = Bm25Index::build(&chunks, params)?;
        let vectors = VectorStore::build(&chunks, embedder)?;
        Self::assemble(chunks, bm25, vectors)
    }

    fn assemble(chunks: Vec<Chunk>, bm25: Bm25Index, vectors: VectorStore) -> Result<Self> {
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect::<HashMap<_, _>>();
        if by_id.len() != chunks.len() {
            return Err(Error::InvalidArgument("chunk ids must be unique".into()));
        }
        Ok(SearchIndex {
            chunks,
            by_id,
            bm25,
            vectors,
        })
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let ids = self.vectors.ids();
        let row_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut vector_bytes = Vec::with_capacity(ids.len() * self.vectors.dim() * 4);
        for c in &self.chunks {
            let row = row_of
                .get(c.id.as_str())
                .ok_or_else(|| Error::UnknownChunk(c.id.clone()))?;
            for v in &self.vectors.vectors()[*row].values {
                vector_bytes.extend_from_slice(&v.to_le_bytes());
            }
        }

        let mut postings = Vec::new();
        let bm25_ids = self.bm25.chunk_ids();
        for (term, list) in self.bm25.postings() {
            let p: Vec<(&str, u32)> = list
                .iter()
                .map(|&(o, tf)| (bm25_ids[o as usize].as_str(), tf))
                .collect();
            serde_json::to_writer(&mut postings, &PostingLine { t: term.clone(), p: p.iter().map(|(id, tf)| (id.to_string(), *tf)).collect() })?;
            postings.push(b'\n');
        }

        let mut chunk_bytes = Vec::new();
        for c in &self.chunks {
            serde_json::to_writer(&mut chunk_bytes, c)?;
            chunk_bytes.push(b'\n');
        }

        let params = self.bm25.params();
        let manifest = Manifest {
            version: INDEX_VERSION,
            dim: self.vectors.dim(),
            counts: Counts {
                chunks: self.chunks.len(),
                terms: self.bm25.postings().len(),
            },
            embedder: self.vectors.fingerprint().to_string(),
            k1: params.k1,
            b: params.b,
            chunk_ids: self.chunks.iter().map(|c| c.id.clone()).collect(),
            checksums: BTreeMap::from([
                (VECTORS.to_string(), sha256_hex(&vector_bytes)),
                (POSTINGS.to_string(), sha256_hex(&postings)),
                (CHUNKS.to_string(), sha256_hex(&chunk_bytes)),
            ]),
        };
        write_atomic(dir, VECTORS, &vector_bytes)?;
        write_atomic(dir, POSTINGS, &postings)?;
        write_atomic(dir, CHUNKS, &chunk_bytes)?;
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        write_atomic(dir, MANIFEST, &manifest_bytes)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST);
        if !manifest_path.is_file() {
            return Err(Error::MissingManifest(dir.to_path_buf()));
        }
        let manifest_bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let version: VersionProbe = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        if version.version != INDEX_VERSION {
            return Err(Error::VersionMismatch {
                expected: INDEX_VERSION,
                found: version.version,
            });
        }
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;

        let read_checked = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let expected = manifest
                .checksums
                .get(name)
                .ok_or_else(|| Error::Corrupt(format!("manifest has no checksum for {name}")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(Error::Checksum { file: name.to_string() });
            }
            Ok(bytes)
        };
        let vector_bytes = read_checked(VECTORS)?;
        let posting_bytes = read_checked(POSTINGS)?;
        let chunk_bytes = read_checked(CHUNKS)?;

        let chunks: Vec<Chunk> = chunk_bytes
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .map(serde_json::from_slice)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Corrupt(format!("{CHUNKS}: {e}")))?;
        let ids: Vec<String> = chunks.iter().map(|c| c.id.clone()).collect();
        if ids != manifest.chunk_ids || ids.len() != manifest.counts.chunks {
            return Err(Error::Corrupt("chunk ids disagree with manifest".into()));
        }

        let row_bytes = manifest.dim * 4;
        if vector_bytes.len() != row_bytes * ids.len() {
            return Err(Error::Corrupt(format!(
                "{VECTORS} has {} bytes, expected {}",
                vector_bytes.len(),
                row_bytes * ids.len()
            )));
        }
        let vectors = if row_bytes == 0 {
            Vec::new()
        } else {
            vector_bytes
                .chunks_exact(row_bytes)
                .map(|row| {
                    EmbeddingVector::new(
                        row.chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    )
                })
                .collect()
        };
        let store = VectorStore::from_parts(ids.clone(), vectors, manifest.dim, manifest.embedder.clone())?;

        let ordinal: HashMap<&str, u32> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i as u32)).collect();
        let mut postings = BTreeMap::new();
        for line in posting_bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let line: PostingLine = serde_json::from_slice(line).map_err(|e| Error::Corrupt(format!("{POSTINGS}: {e}")))?;
            let mut list = Vec::with_capacity(line.p.len());
            for (id, tf) in line.p {
                let &o = ordinal
                    .get(id.as_str())
                    .ok_or_else(|| Error::Corrupt(format!("posting for unknown chunk {id:?}")))?;
                list.push((o, tf));
            }
            list.sort_unstable();
            postings.insert(line.t, list);
        }
        if postings.len() != manifest.counts.terms {
            return Err(Error::Corrupt("term count disagrees with manifest".into()));
        }
        let bm25 = Bm25Index::from_parts(
            ids,
            postings,
            Bm25Params {
                k1: manifest.k1,
                b: manifest.b,
            },
        )?;
        Self::assemble(chunks, bm25, store)
    }

    /// Loads and checks that the stored vectors live in `spec`'s space.
    pub fn load_for(dir: impl AsRef<Path>, spec: &EmbedderSpec) -> Result<Self> {
        let idx = Self::load(dir)?;
        if idx.vectors.fingerprint() != spec.fingerprint() {
            return Err(Error::InvalidArgument(format!(
                "index was built with embedder {:?} but the configuration uses {:?}",
                idx.vectors.fingerprint(),
                spec.fingerprint()
            )));
        }
        Ok(idx)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PostingLine {
    t: String,
    p: Vec<(String, u32)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Counts {
    chunks: usize,
    terms: usize,
}

#[derive(Debug, Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    counts: Counts,
    embedder: String,
    k1: f64,
    b: f64,
    chunk_ids: Vec<String>,
    checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}
