use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use specqa::indexing::Bm25Params;
use specqa::{
    AblationFlags, EmbedderSpec, GeneratorSpec, PromptTemplate, RerankerSpec, RetrievalConfig,
    SelfExtendConfig, SemanticChunkConfig,
};

pub const CONFIG_ENV: &str = "TELEORACLE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub semantic: SemanticChunkConfig,
    pub fixed_chunk_tokens: usize,
    pub fixed_overlap_tokens: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            semantic: SemanticChunkConfig::default(),
            fixed_chunk_tokens: 256,
            fixed_overlap_tokens: 32,
        }
    }
}

/// The single JSON configuration document. Relative paths are resolved
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// JSONL corpus, one document per line.
    pub corpus: PathBuf,
    /// Chunk dumps, indexes and reports are written below this directory.
    pub workdir: PathBuf,
    pub chunking: ChunkingConfig,
    pub bm25: Bm25Params,
    pub retrieval: RetrievalConfig,
    pub embedder: EmbedderSpec,
    pub reranker: RerankerSpec,
    pub generator: GeneratorSpec,
    pub template: PromptTemplate,
    pub selfextend: SelfExtendConfig,
    pub flags: AblationFlags,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            workdir: PathBuf::from("specqa-work"),
            chunking: ChunkingConfig::default(),
            bm25: Bm25Params::default(),
            retrieval: RetrievalConfig::default(),
            embedder: EmbedderSpec::default(),
            reranker: RerankerSpec::default(),
            generator: GeneratorSpec::default(),
            template: PromptTemplate::default(),
            selfextend: SelfExtendConfig::default(),
            flags: AblationFlags::default(),
        }
    }
}

impl AppConfig {
    /// `--config` wins over `TELEORACLE_CONFIG`; with neither, defaults
    /// relative to the working directory.
    pub fn resolve(explicit: Option<&Path>) -> anyhow::Result<AppConfig> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => AppConfig::load(&path),
            None => {
                let cfg = AppConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<AppConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: AppConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.corpus = base.join(&cfg.corpus);
        cfg.workdir = base.join(&cfg.workdir);
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.chunking.semantic.validate()?;
        if self.chunking.fixed_chunk_tokens <= self.chunking.fixed_overlap_tokens {
            bail!(
                "chunking.fixed_chunk_tokens ({}) must exceed chunking.fixed_overlap_tokens ({})",
                self.chunking.fixed_chunk_tokens,
                self.chunking.fixed_overlap_tokens
            );
        }
        self.bm25.validate()?;
        self.retrieval.validate()?;
        self.embedder.validate()?;
        self.selfextend.validate()?;
        Ok(())
    }

    pub fn chunk_dir(&self) -> PathBuf {
        self.workdir.join("chunks")
    }

    pub fn index_dir(&self) -> PathBuf {
        self.workdir.join("index")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.workdir.join("reports")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = AppConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AppConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<AppConfig>(r#"{"corpus": "a", "colour": 1}"#).is_err());
        assert!(serde_json::from_str::<AppConfig>(r#"{"bm25": {"k1": 1.2, "k": 3}}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: AppConfig = serde_json::from_str(r#"{"bm25": {"k1": 1.2, "b": 0.5}}"#).unwrap();
        assert_eq!(cfg.bm25.k1, 1.2);
        assert_eq!(cfg.chunking, ChunkingConfig::default());
    }

    #[test]
    fn bad_overlap_rejected() {
        let mut cfg = AppConfig::default();
        cfg.chunking.fixed_overlap_tokens = 256;
        assert!(cfg.validate().is_err());
    }
}
