use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use specqa::chunking::{fixed_chunk_corpus, read_chunks, semantic_chunk_corpus, write_chunks};
use specqa::corpus::{load_corpus, split_sentences};
use specqa::embedding::{cosine_similarity, Embedder};
use specqa::eval::{
    compare_reports, load_questions, run_eval, ComparisonTable, Pipeline, ANSWER_RESERVE_TOKENS,
    EXTENDED_TARGET_TOKENS,
};
use specqa::indexing::INDEX_VERSION;
use specqa::prompting::Generator;
use specqa::retrieval::{retrieval_query, Reranker};
use specqa::selfextend::{build_position_matrix, capacity, detect_ood};
use specqa::text::index_terms;
use specqa::{
    AblationFlags, Chunk, ChunkStrategy, Error, EvalReport, GeneratorSpec, McqItem, ScoreSource,
    SearchIndex, SelfExtendConfig,
};

use crate::config::AppConfig;

/// Something a command prints: aligned text by default, JSON with `--json`.
pub trait Render: Serialize {
    fn text(&self) -> String;
}

pub fn emit<T: Render>(value: &T, json: bool) -> anyhow::Result<String> {
    Ok(if json {
        serde_json::to_string_pretty(value)? + "\n"
    } else {
        value.text()
    })
}

#[derive(Debug, Serialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

#[derive(Debug, Serialize)]
pub struct StrategyStats {
    pub strategy: ChunkStrategy,
    pub chunks: usize,
    pub tokens_min: usize,
    pub tokens_mean: f64,
    pub tokens_max: usize,
    pub histogram: Vec<Bucket>,
    pub path: PathBuf,
}

impl StrategyStats {
    fn of(strategy: ChunkStrategy, chunks: &[Chunk], path: PathBuf) -> Self {
        let sizes: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
        let total: usize = sizes.iter().sum();
        StrategyStats {
            strategy,
            chunks: sizes.len(),
            tokens_min: sizes.iter().copied().min().unwrap_or(0),
            tokens_mean: if sizes.is_empty() { 0.0 } else { total as f64 / sizes.len() as f64 },
            tokens_max: sizes.iter().copied().max().unwrap_or(0),
            histogram: histogram(&sizes),
            path,
        }
    }
}

/// Power-of-two buckets `[lo, hi]` from 0–15 upwards, empty ones kept so the
/// shape is visible.
pub fn histogram(sizes: &[usize]) -> Vec<Bucket> {
    let Some(&max) = sizes.iter().max() else {
        return Vec::new();
    };
    let mut buckets = vec![Bucket { lo: 0, hi: 15, count: 0 }];
    while buckets.last().unwrap().hi < max {
        let lo = buckets.last().unwrap().hi + 1;
        buckets.push(Bucket { lo, hi: lo * 2 - 1, count: 0 });
    }
    for &s in sizes {
        let b = buckets.iter_mut().find(|b| s <= b.hi).unwrap();
        b.count += 1;
    }
    buckets
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub sentences: usize,
    pub strategies: Vec<StrategyStats>,
}

impl Render for IngestSummary {
    fn text(&self) -> String {
        let mut out = format!("{} documents, {} sentences\n", self.documents, self.sentences);
        for s in &self.strategies {
            let name = match s.strategy {
                ChunkStrategy::Semantic => "semantic",
                ChunkStrategy::Fixed => "fixed",
            };
            let _ = writeln!(
                out,
                "\n{name}: {} chunks, tokens min {} / mean {:.1} / max {} -> {}",
                s.chunks,
                s.tokens_min,
                s.tokens_mean,
                s.tokens_max,
                s.path.display()
            );
            let widest = s.histogram.iter().map(|b| b.count).max().unwrap_or(1).max(1);
            for b in &s.histogram {
                let bar = "#".repeat((b.count * 40).div_ceil(widest));
                let _ = writeln!(out, "  {:>5}-{:<5} {:>6}  {bar}", b.lo, b.hi, b.count);
            }
        }
        out
    }
}

fn semantic_dump(cfg: &AppConfig) -> PathBuf {
    cfg.chunk_dir().join("semantic.jsonl")
}

fn fixed_dump(cfg: &AppConfig) -> PathBuf {
    cfg.chunk_dir().join("fixed.jsonl")
}

pub fn cmd_ingest(cfg: &AppConfig) -> anyhow::Result<IngestSummary> {
    let docs = load_corpus(&cfg.corpus)?;
    if docs.is_empty() {
        bail!("no documents in {}", cfg.corpus.display());
    }
    let embedder = Embedder::new(cfg.embedder.clone())?;
    let semantic = semantic_chunk_corpus(&docs, &cfg.chunking.semantic, &embedder)?;
    let fixed = fixed_chunk_corpus(
        &docs,
        cfg.chunking.fixed_chunk_tokens,
        cfg.chunking.fixed_overlap_tokens,
    )?;
    fs::create_dir_all(cfg.chunk_dir())
        .with_context(|| format!("creating {}", cfg.chunk_dir().display()))?;
    write_chunks(semantic_dump(cfg), &semantic)?;
    write_chunks(fixed_dump(cfg), &fixed)?;
    Ok(IngestSummary {
        documents: docs.len(),
        sentences: docs.iter().map(|d| split_sentences(d).len()).sum(),
        strategies: vec![
            StrategyStats::of(ChunkStrategy::Semantic, &semantic, semantic_dump(cfg)),
            StrategyStats::of(ChunkStrategy::Fixed, &fixed, fixed_dump(cfg)),
        ],
    })
}

#[derive(Debug, Serialize)]
pub struct IndexStats {
    pub strategy: ChunkStrategy,
    pub chunks: usize,
    pub terms: usize,
    pub dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct IndexSummary {
    pub version: u32,
    pub embedder: String,
    pub indexes: Vec<IndexStats>,
}

impl Render for IndexSummary {
    fn text(&self) -> String {
        let mut out = format!("index format v{}, embedder {}\n", self.version, self.embedder);
        for i in &self.indexes {
            let _ = writeln!(
                out,
                "  {:<9}{:>7} chunks {:>7} terms  {}",
                format!("{:?}", i.strategy).to_lowercase(),
                i.chunks,
                i.terms,
                i.dir.display()
            );
        }
        out
    }
}

fn strategy_dir(cfg: &AppConfig, strategy: ChunkStrategy) -> PathBuf {
    cfg.index_dir().join(match strategy {
        ChunkStrategy::Semantic => "semantic",
        ChunkStrategy::Fixed => "fixed",
    })
}

pub fn cmd_index(cfg: &AppConfig) -> anyhow::Result<IndexSummary> {
    let embedder = Embedder::new(cfg.embedder.clone())?;
    let mut indexes = Vec::new();
    for (strategy, dump) in [
        (ChunkStrategy::Semantic, semantic_dump(cfg)),
        (ChunkStrategy::Fixed, fixed_dump(cfg)),
    ] {
        if !dump.exists() {
            bail!("chunk dump {} not found; run `specqa ingest` first", dump.display());
        }
        let chunks = read_chunks(&dump)?;
        if chunks.is_empty() {
            bail!("chunk dump {} is empty; rerun `specqa ingest`", dump.display());
        }
        let index = SearchIndex::build(chunks, cfg.bm25, &embedder)?;
        let dir = strategy_dir(cfg, strategy);
        index.persist(&dir)?;
        indexes.push(IndexStats {
            strategy,
            chunks: index.len(),
            terms: index.bm25.postings().len(),
            dir,
        });
    }
    Ok(IndexSummary {
        version: INDEX_VERSION,
        embedder: cfg.embedder.fingerprint(),
        indexes,
    })
}

fn load_index(cfg: &AppConfig, strategy: ChunkStrategy) -> anyhow::Result<SearchIndex> {
    let dir = strategy_dir(cfg, strategy);
    match SearchIndex::load_for(&dir, &cfg.embedder) {
        Ok(idx) => Ok(idx),
        Err(Error::MissingManifest(_)) => {
            bail!("no index at {}; run `specqa index` first", dir.display())
        }
        Err(e @ (Error::VersionMismatch { .. } | Error::Checksum { .. })) => {
            Err(anyhow::Error::new(e).context(format!("index at {} is unusable; rerun `specqa index`", dir.display())))
        }
        Err(e) => Err(e.into()),
    }
}

/// Applies `--seed` to a seeded generator; other generators ignore it.
pub fn seeded_generator(spec: &GeneratorSpec, seed: Option<u64>) -> GeneratorSpec {
    match (spec, seed) {
        (GeneratorSpec::StubRandom { .. }, Some(seed)) => GeneratorSpec::StubRandom { seed },
        _ => spec.clone(),
    }
}

pub fn load_pipeline(cfg: &AppConfig, seed: Option<u64>) -> anyhow::Result<Pipeline> {
    Ok(Pipeline {
        semantic: Some(load_index(cfg, ChunkStrategy::Semantic)?),
        fixed: Some(load_index(cfg, ChunkStrategy::Fixed)?),
        embedder: Embedder::new(cfg.embedder.clone())?,
        reranker: Reranker::new(&cfg.reranker),
        generator: Generator::new(seeded_generator(&cfg.generator, seed)),
        template: cfg.template.clone(),
        retrieval: cfg.retrieval,
        selfextend: cfg.selfextend,
        extended_target_tokens: EXTENDED_TARGET_TOKENS,
        answer_reserve_tokens: ANSWER_RESERVE_TOKENS,
    })
}

/// Flag overrides from the command line; each one can only switch a
/// component off.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlagOverrides {
    pub no_self_extend: bool,
    pub no_rerank: bool,
    pub no_semantic_chunks: bool,
    pub single_context: bool,
}

impl FlagOverrides {
    pub fn apply(&self, mut flags: AblationFlags) -> AblationFlags {
        flags.se &= !self.no_self_extend;
        flags.rr &= !self.no_rerank;
        flags.sc &= !self.no_semantic_chunks;
        flags.mc &= !self.single_context;
        flags
    }
}

#[derive(Debug, Serialize)]
pub struct BundleRow {
    pub rank: usize,
    pub chunk_id: String,
    pub strategy: ChunkStrategy,
    pub tokens: usize,
    pub padded: bool,
    pub in_prompt: bool,
    pub keyword: f64,
    pub vector: f64,
    pub rerank: Option<f64>,
    pub selected_by: ScoreSource,
}

#[derive(Debug, Serialize)]
pub struct QueryOutput {
    pub question: String,
    pub options: Vec<String>,
    pub flags: AblationFlags,
    pub output: String,
    pub predicted: Option<usize>,
    pub chosen_option: Option<String>,
    pub prompt_tokens: usize,
    pub prompt_budget: usize,
    pub contexts_used: usize,
    pub faithfulness: f64,
    pub bundle: Vec<BundleRow>,
}

impl Render for QueryOutput {
    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "question: {}", self.question);
        match (&self.predicted, &self.chosen_option) {
            (Some(i), Some(o)) => {
                let _ = writeln!(out, "answer:   {i}) {o}");
            }
            _ => {
                let _ = writeln!(out, "answer:   (unparsed)");
            }
        }
        let _ = writeln!(out, "output:   {}", self.output.trim());
        let _ = writeln!(
            out,
            "flags:    {}  prompt {} / {} tokens, {} of {} contexts, faithfulness {:.3}",
            self.flags.label(),
            self.prompt_tokens,
            self.prompt_budget,
            self.contexts_used,
            self.bundle.len(),
            self.faithfulness
        );
        let _ = writeln!(
            out,
            "\n{:>4}  {:<24}{:<9}{:>6}  {:>9}{:>9}{:>9}  via",
            "rank", "chunk", "kind", "tokens", "keyword", "vector", "rerank"
        );
        for r in &self.bundle {
            let kind = match r.strategy {
                ChunkStrategy::Semantic => "semantic",
                ChunkStrategy::Fixed => "fixed",
            };
            let rerank = r.rerank.map_or("-".to_string(), |s| format!("{s:.4}"));
            let via = if r.padded {
                "padding".to_string()
            } else {
                format!("{:?}", r.selected_by).to_lowercase()
            };
            let mark = if r.in_prompt { "" } else { " (dropped: budget)" };
            let _ = writeln!(
                out,
                "{:>4}  {:<24}{:<9}{:>6}  {:>9.4}{:>9.4}{:>9}  {via}{mark}",
                r.rank, r.chunk_id, kind, r.tokens, r.keyword, r.vector, rerank
            );
        }
        out
    }
}

fn stage_scores(index: &SearchIndex, embedder_query: &specqa::EmbeddingVector, terms: &[String], chunk_id: &str) -> anyhow::Result<(f64, f64)> {
    let keyword = index.bm25.score(terms, chunk_id)?;
    let pos = index
        .vectors
        .ids()
        .iter()
        .position(|id| id == chunk_id)
        .ok_or_else(|| Error::UnknownChunk(chunk_id.to_string()))?;
    let vector = cosine_similarity(embedder_query, &index.vectors.vectors()[pos])?;
    Ok((keyword, vector))
}

pub fn cmd_query(
    cfg: &AppConfig,
    question: &str,
    options: &[String],
    overrides: FlagOverrides,
    seed: Option<u64>,
) -> anyhow::Result<QueryOutput> {
    let item = McqItem::new(question, options.to_vec(), None);
    item.validate()?;
    let pipeline = load_pipeline(cfg, seed)?;
    let flags = overrides.apply(cfg.flags);
    let answer = pipeline.answer(&item, flags)?;

    let query = retrieval_query(&item, &cfg.retrieval);
    let terms = index_terms(&query);
    let qv = pipeline.embedder.embed_one(&query)?;
    let mut bundle = Vec::with_capacity(answer.bundle.entries.len());
    for (i, e) in answer.bundle.entries.iter().enumerate() {
        let index = match e.chunk.strategy {
            ChunkStrategy::Semantic => pipeline.semantic.as_ref(),
            ChunkStrategy::Fixed => pipeline.fixed.as_ref(),
        }
        .expect("both indexes are loaded");
        let (keyword, vector) = stage_scores(index, &qv, &terms, &e.chunk.id)?;
        bundle.push(BundleRow {
            rank: i + 1,
            chunk_id: e.chunk.id.clone(),
            strategy: e.chunk.strategy,
            tokens: e.chunk.token_count,
            padded: e.padded,
            in_prompt: i < answer.contexts_used,
            keyword,
            vector,
            rerank: (e.score.source == ScoreSource::Reranked).then_some(e.score.score),
            selected_by: e.score.source,
        });
    }
    Ok(QueryOutput {
        question: question.to_string(),
        options: options.to_vec(),
        flags,
        chosen_option: answer.predicted.map(|i| options[i - 1].clone()),
        predicted: answer.predicted,
        output: answer.output,
        prompt_tokens: answer.prompt_tokens,
        prompt_budget: pipeline.prompt_budget(flags),
        contexts_used: answer.contexts_used,
        faithfulness: answer.faithfulness,
        bundle,
    })
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub questions: usize,
    pub reports: Vec<PathBuf>,
    pub comparison: ComparisonTable,
}

impl Render for EvalSummary {
    fn text(&self) -> String {
        let mut out = format!("{} questions, {} configurations\n\n", self.questions, self.reports.len());
        out.push_str(&self.comparison.render());
        if let Some(dir) = self.reports.first().and_then(|p| p.parent()) {
            let _ = writeln!(out, "\nreports written to {}", dir.display());
        }
        out
    }
}

pub fn report_file_name(flags: AblationFlags) -> String {
    format!("report-{}.json", flags.label())
}

pub fn cmd_eval(
    cfg: &AppConfig,
    questions: &Path,
    sweep: bool,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<EvalSummary> {
    let items = load_questions(questions)?;
    if items.is_empty() {
        bail!("no questions in {}", questions.display());
    }
    let pipeline = load_pipeline(cfg, seed)?;
    let combos = if sweep { AblationFlags::sweep() } else { vec![cfg.flags] };
    let out_dir = out_dir.map_or_else(|| cfg.report_dir(), Path::to_path_buf);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut reports: Vec<EvalReport> = Vec::with_capacity(combos.len());
    let mut paths = Vec::with_capacity(combos.len());
    for flags in combos {
        let report = run_eval(&items, &pipeline, flags)?;
        let path = out_dir.join(report_file_name(flags));
        write_atomic(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        reports.push(report);
        paths.push(path);
    }
    let comparison = compare_reports(&reports)?;
    write_atomic(
        &out_dir.join("comparison.json"),
        &(serde_json::to_string_pretty(&comparison)? + "\n"),
    )?;
    write_atomic(&out_dir.join("comparison.txt"), &comparison.render())?;
    Ok(EvalSummary {
        questions: items.len(),
        reports: paths,
        comparison,
    })
}

fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct PositionsOutput {
    pub len: usize,
    pub trained_window: usize,
    pub neighbor_window: usize,
    pub group_size: usize,
    pub capacity: usize,
    pub max_entry: usize,
    pub matrix: Vec<Vec<usize>>,
    pub ood: Vec<(usize, usize)>,
}

impl Render for PositionsOutput {
    fn text(&self) -> String {
        let mut out = format!(
            "T={} L={} w_n={} G_s={}  capacity {}  max entry {}\n\n",
            self.len, self.trained_window, self.neighbor_window, self.group_size, self.capacity, self.max_entry
        );
        let width = self.max_entry.to_string().len().max(1);
        for (q, row) in self.matrix.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let mark = if self.ood.contains(&(q, k)) { "*" } else { " " };
                    format!("{v:>width$}{mark}")
                })
                .collect();
            let _ = writeln!(out, "{q:>4} | {}", cells.join(" "));
        }
        if self.ood.is_empty() {
            out.push_str("\nno out-of-range positions\n");
        } else {
            let cells: Vec<String> = self.ood.iter().map(|(q, k)| format!("({q},{k})")).collect();
            let _ = writeln!(out, "\n{} out-of-range cells (*): {}", self.ood.len(), cells.join(" "));
        }
        out
    }
}

pub fn cmd_positions(len: usize, trained: usize, neighbor: usize, group: usize) -> anyhow::Result<PositionsOutput> {
    if len == 0 {
        bail!("sequence length must be at least 1");
    }
    let cfg = SelfExtendConfig::new(trained, neighbor, group)?;
    let m = build_position_matrix(len, &cfg);
    Ok(PositionsOutput {
        len,
        trained_window: trained,
        neighbor_window: neighbor,
        group_size: group,
        capacity: capacity(&cfg),
        max_entry: m.max_entry(),
        ood: detect_ood(&m, trained),
        matrix: m.rows().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_buckets() {
        let h = histogram(&[0, 15, 16, 40, 100]);
        let shape: Vec<_> = h.iter().map(|b| (b.lo, b.hi, b.count)).collect();
        assert_eq!(shape, [(0, 15, 2), (16, 31, 1), (32, 63, 1), (64, 127, 1)]);
        assert!(histogram(&[]).is_empty());
    }

    #[test]
    fn overrides_only_switch_off() {
        let on = AblationFlags::all_on();
        let o = FlagOverrides { no_rerank: true, ..Default::default() };
        assert_eq!(o.apply(on), AblationFlags { rr: false, ..on });
        let off = AblationFlags { se: false, rr: false, sc: false, mc: false };
        assert_eq!(FlagOverrides::default().apply(off), off);
    }

    #[test]
    fn seed_only_touches_random_stub() {
        assert_eq!(
            seeded_generator(&GeneratorSpec::StubRandom { seed: 1 }, Some(5)),
            GeneratorSpec::StubRandom { seed: 5 }
        );
        assert_eq!(seeded_generator(&GeneratorSpec::StubOracle, Some(5)), GeneratorSpec::StubOracle);
    }

    #[test]
    fn positions_fixture() {
        let p = cmd_positions(6, 4, 2, 2).unwrap();
        assert_eq!(p.capacity, 6);
        assert_eq!(p.max_entry, 3);
        assert!(p.ood.is_empty());
        assert_eq!(p.matrix[5], [3, 3, 2, 2, 1, 0]);
        assert_eq!(cmd_positions(7, 4, 2, 2).unwrap().ood, [(6, 0), (6, 1)]);
    }
}
