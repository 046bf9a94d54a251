//! Retrieval-augmented question answering over technical document corpora.
//!
//! The pipeline is: [`corpus`] ingestion and sentence segmentation,
//! [`chunking`] (semantic and fixed-size), first-stage [`indexing`] (BM25 and
//! an exact cosine vector store), two-stage [`retrieval`] with reranking and
//! token-budget padding, [`prompting`] and answer extraction, and the MCQ
//! [`eval`] harness. [`selfextend`] and [`lora`] hold the context-extension and
//! low-rank-adaptation math at a scale that can be checked exhaustively.
//!
//! Every model-backed stage has a deterministic reference implementation and a
//! remote HTTP client (see [`remote`]).

pub mod chunking;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod indexing;
pub mod lora;
pub mod prompting;
pub mod remote;
pub mod retrieval;
pub mod selfextend;
pub mod synthetic;
pub mod text;

pub use chunking::{Chunk, ChunkStrategy, SemanticChunkConfig};
pub use corpus::{Document, Sentence};
pub use embedding::{EmbedderSpec, EmbeddingVector};
pub use error::{Error, Result};
pub use eval::{AblationFlags, EvalReport, McqItem};
pub use indexing::{Bm25Index, SearchIndex, VectorStore};
pub use lora::{LoraAdapter, QuantizedMatrix};
pub use prompting::{GeneratorSpec, PromptTemplate};
pub use retrieval::{ContextBundle, RerankerSpec, RetrievalConfig, ScoreSource, ScoredChunk};
pub use selfextend::{PositionMatrix, SelfExtendConfig};
