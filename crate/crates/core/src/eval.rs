//! MCQ evaluation with ablation toggles, a lexical faithfulness proxy, and
//! comparison tables across flag combinations.
//!
//! Question files are a JSON array, or a JSON object whose keys become
//! question ids. Each item is either keyed,
//!
//! ```json
//! {"question": "...", "option 1": "...", "option 2": "...", "answer": "option 2: ...", "explanation": "..."}
//! ```
//!
//! or plain: `{"id": "...", "question": "...", "options": ["..."], "answer_index": 2}`.
//! `answer`/`answer_index` may be omitted for unlabeled sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::indexing::SearchIndex;
use crate::prompting::{assemble_prompt, extract_answer, Generator, PromptTemplate};
use crate::retrieval::{retrieve, ContextBundle, Indexes, Reranker, RetrievalConfig};
use crate::selfextend::{capacity, SelfExtendConfig};
use crate::text::content_terms;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub question: String,
    pub options: Vec<String>,
    /// 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl McqItem {
    pub fn new(question: &str, options: Vec<String>, answer_index: Option<usize>) -> Self {
        McqItem {
            id: None,
            question: question.to_string(),
            options,
            answer_index,
            explanation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.options.len()) {
            return Err(Error::InvalidArgument(format!(
                "questions need 2 to 5 options, got {}",
                self.options.len()
            )));
        }
        if let Some(a) = self.answer_index {
            if !(1..=self.options.len()).contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "answer_index {a} outside 1..={}",
                    self.options.len()
                )));
            }
        }
        Ok(())
    }

    pub fn answer_text(&self) -> Option<&str> {
        self.answer_index.map(|i| self.options[i - 1].as_str())
    }
}

fn qid(item: &McqItem, index: usize) -> String {
    item.id.clone().unwrap_or_else(|| format!("q{index}"))
}

pub fn parse_questions(json: &str) -> Result<Vec<McqItem>> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let entries: Vec<(Option<String>, serde_json::Value)> = match value {
        serde_json::Value::Array(items) => items.into_iter().map(|v| (None, v)).collect(),
        serde_json::Value::Object(map) => map.into_iter().map(|(k, v)| (Some(k), v)).collect(),
        _ => return Err(Error::InvalidArgument("question file must be a JSON array or object".into())),
    };
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (key, v))| {
            let mut item = parse_item(&v).map_err(|m| Error::InvalidArgument(format!("question {i}: {m}")))?;
            if item.id.is_none() {
                item.id = key;
            }
            item.validate()?;
            Ok(item)
        })
        .collect()
}

fn parse_item(v: &serde_json::Value) -> std::result::Result<McqItem, String> {
    let obj = v.as_object().ok_or("expected an object")?;
    let text = |k: &str| obj.get(k).and_then(|x| x.as_str()).map(str::to_string);
    let question = text("question").ok_or("missing question")?;
    let explanation = text("explanation");
    let id = text("id");

    if let Some(opts) = obj.get("options") {
        let options = opts
            .as_array()
            .ok_or("options must be an array")?
            .iter()
            .map(|o| o.as_str().map(str::to_string).ok_or("options must be strings"))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let answer_index = match obj.get("answer_index") {
            None | Some(serde_json::Value::Null) => None,
            Some(x) => Some(x.as_u64().ok_or("answer_index must be an integer")? as usize),
        };
        return Ok(McqItem {
            id,
            question,
            options,
            answer_index,
            explanation,
        });
    }

    let mut options = Vec::new();
    for n in 1..=5 {
        match text(&format!("option {n}")) {
            Some(o) => options.push(o),
            None => break,
        }
    }
    let answer_index = match text("answer") {
        None => None,
        Some(a) => {
            let rest = a.trim_start().strip_prefix("option").ok_or("answer must start with \"option k\"")?;
            let digits: String = rest.trim_start().chars().take_while(char::is_ascii_digit).collect();
            Some(digits.parse::<usize>().map_err(|_| format!("unparseable answer {a:?}"))?)
        }
    };
    Ok(McqItem {
        id,
        question,
        options,
        answer_index,
        explanation,
    })
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<McqItem>> {
    let path = path.as_ref();
    parse_questions(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Extended (SelfExtend) token budget instead of the native window.
    #[serde(rename = "SE")]
    pub se: bool,
    /// Cross-encoder rerank stage.
    #[serde(rename = "RR")]
    pub rr: bool,
    /// Semantic chunks as the primary index instead of fixed-size chunks.
    #[serde(rename = "SC")]
    pub sc: bool,
    /// Multiple contexts in the prompt instead of the single best chunk.
    #[serde(rename = "MC")]
    pub mc: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::all_on()
    }
}

impl AblationFlags {
    pub fn all_on() -> Self {
        AblationFlags {
            se: true,
            rr: true,
            sc: true,
            mc: true,
        }
    }

    /// All 16 combinations, all-off first.
    pub fn sweep() -> Vec<AblationFlags> {
        (0..16u8)
            .map(|bits| AblationFlags {
                se: bits & 8 != 0,
                rr: bits & 4 != 0,
                sc: bits & 2 != 0,
                mc: bits & 1 != 0,
            })
            .collect()
    }

    fn key(&self) -> (bool, bool, bool, bool) {
        (self.se, self.rr, self.sc, self.mc)
    }

    pub fn label(&self) -> String {
        let names = [(self.se, "SE"), (self.rr, "RR"), (self.sc, "SC"), (self.mc, "MC")];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        if on.is_empty() {
            "none".to_string()
        } else {
            on.join("+")
        }
    }
}

/// Fraction of the answer's content terms present in the contexts. An answer
/// with no content terms asserts nothing and scores 1.
pub fn faithfulness_proxy(answer_text: &str, contexts: &[&str]) -> f64 {
    let answer = content_terms(answer_text);
    if answer.is_empty() {
        return 1.0;
    }
    let ctx = content_terms(&contexts.join(" "));
    answer.iter().filter(|t| ctx.contains(*t)).count() as f64 / answer.len() as f64
}

/// Everything a question run needs besides the ablation flags.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub semantic: Option<SearchIndex>,
    pub fixed: Option<SearchIndex>,
    pub embedder: Embedder,
    pub reranker: Reranker,
    pub generator: Generator,
    pub template: PromptTemplate,
    pub retrieval: RetrievalConfig,
    pub selfextend: SelfExtendConfig,
    /// Upper bound on the extended prompt length.
    pub extended_target_tokens: usize,
    /// Tokens kept free for the generated answer.
    pub answer_reserve_tokens: usize,
}

pub const EXTENDED_TARGET_TOKENS: usize = 8192;
pub const ANSWER_RESERVE_TOKENS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub bundle: ContextBundle,
    pub prompt: String,
    pub prompt_tokens: usize,
    pub contexts_used: usize,
    pub output: String,
    pub predicted: Option<usize>,
    pub faithfulness: f64,
}

impl Answer {
    pub fn used_chunk_ids(&self) -> Vec<String> {
        self.bundle.entries[..self.contexts_used]
            .iter()
            .map(|e| e.chunk.id.clone())
            .collect()
    }
}

impl Pipeline {
    pub fn prompt_budget(&self, flags: AblationFlags) -> usize {
        let window = if flags.se {
            capacity(&self.selfextend).min(self.extended_target_tokens)
        } else {
            self.selfextend.trained_window
        };
        window.saturating_sub(self.answer_reserve_tokens)
    }

    pub fn retrieve(&self, q: &McqItem, flags: AblationFlags) -> Result<ContextBundle> {
        let indexes = Indexes {
            primary: if flags.sc { self.semantic.as_ref() } else { self.fixed.as_ref() },
            padding: self.fixed.as_ref(),
            embedder: &self.embedder,
        };
        let reranker = flags.rr.then_some(&self.reranker);
        let bundle = retrieve(q, &indexes, &self.retrieval, reranker)?;
        Ok(if flags.mc { bundle } else { bundle.truncated(1) })
    }

    /// retrieve → assemble → generate → extract.
    pub fn answer(&self, q: &McqItem, flags: AblationFlags) -> Result<Answer> {
        q.validate()?;
        let bundle = self.retrieve(q, flags)?;
        let prompt = assemble_prompt(&self.template, &bundle, q, self.prompt_budget(flags))?;
        let output = self.generator.generate(&prompt.text)?;
        let predicted = extract_answer(&output, q.options.len());
        let answer_text = predicted.map_or(output.as_str(), |i| q.options[i - 1].as_str());
        let used = &bundle.texts()[..prompt.contexts_used];
        let faithfulness = faithfulness_proxy(answer_text, used);
        Ok(Answer {
            prompt_tokens: prompt.tokens,
            contexts_used: prompt.contexts_used,
            prompt: prompt.text,
            bundle,
            output,
            predicted,
            faithfulness,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub predicted: Option<usize>,
    pub gold: Option<usize>,
    pub contexts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub flags: AblationFlags,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub n_unparsed: usize,
    pub faithfulness_proxy: f64,
    pub records: Vec<QuestionRecord>,
}

/// Report JSON: `{"flags", "n", "accuracy", "unparsed", "faithfulness", "records"}`.
#[derive(Debug, Serialize, Deserialize)]
struct ReportJson {
    flags: AblationFlags,
    n: usize,
    accuracy: f64,
    unparsed: usize,
    faithfulness: f64,
    records: Vec<QuestionRecord>,
}

impl Serialize for EvalReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReportJson {
            flags: self.flags,
            n: self.n,
            accuracy: self.accuracy,
            unparsed: self.n_unparsed,
            faithfulness: self.faithfulness_proxy,
            records: self.records.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EvalReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ReportJson::deserialize(d)?;
        let n_correct = r
            .records
            .iter()
            .filter(|x| x.predicted.is_some() && x.predicted == x.gold)
            .count();
        Ok(EvalReport {
            flags: r.flags,
            n: r.n,
            n_correct,
            accuracy: r.accuracy,
            n_unparsed: r.unparsed,
            faithfulness_proxy: r.faithfulness,
            records: r.records,
        })
    }
}

/// Scores labeled questions. Unparseable generator output counts as wrong.
pub fn run_eval(questions: &[McqItem], pipeline: &Pipeline, flags: AblationFlags) -> Result<EvalReport> {
    for (i, q) in questions.iter().enumerate() {
        if q.answer_index.is_none() {
            return Err(Error::Unlabeled(qid(q, i)));
        }
    }
    let answers: Vec<Answer> = questions
        .par_iter()
        .map(|q| pipeline.answer(q, flags))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(questions.len());
    let (mut n_correct, mut n_unparsed, mut faith) = (0, 0, 0.0);
    for (i, (q, a)) in questions.iter().zip(&answers).enumerate() {
        match a.predicted {
            None => n_unparsed += 1,
            Some(p) if Some(p) == q.answer_index => n_correct += 1,
            Some(_) => {}
        }
        faith += a.faithfulness;
        records.push(QuestionRecord {
            qid: qid(q, i),
            predicted: a.predicted,
            gold: q.answer_index,
            contexts: a.used_chunk_ids(),
        });
    }
    let n = questions.len();
    let ratio = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(EvalReport {
        flags,
        n,
        n_correct,
        accuracy: ratio(n_correct as f64),
        n_unparsed,
        faithfulness_proxy: if n == 0 { 1.0 } else { ratio(faith) },
        records,
    })
}

/// Predictions for unlabeled (or labeled) questions without scoring.
pub fn run_predict(questions: &[McqItem], pipeline: &Pipeline, flags: AblationFlags) -> Result<Vec<QuestionRecord>> {
    let answers: Vec<Answer> = questions
        .par_iter()
        .map(|q| pipeline.answer(q, flags))
        .collect::<Result<_>>()?;
    Ok(questions
        .iter()
        .zip(answers)
        .enumerate()
        .map(|(i, (q, a))| QuestionRecord {
            qid: qid(q, i),
            predicted: a.predicted,
            gold: q.answer_index,
            contexts: a.used_chunk_ids(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub flags: AblationFlags,
    pub label: String,
    pub n: usize,
    pub accuracy: f64,
    pub faithfulness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<4}{:<4}{:<4}{:<4}{:>6}{:>10}{:>14}", "SE", "RR", "SC", "MC", "n", "accuracy", "faithfulness");
        let mark = |b: bool| if b { "x" } else { "-" };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<4}{:<4}{:<4}{:<4}{:>6}{:>9.2}%{:>14.4}",
                mark(r.flags.se),
                mark(r.flags.rr),
                mark(r.flags.sc),
                mark(r.flags.mc),
                r.n,
                r.accuracy * 100.0,
                r.faithfulness
            );
        }
        out
    }
}

/// Rows sorted by accuracy descending, ties by flag tuple ascending.
pub fn compare_reports(reports: &[EvalReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            flags: r.flags,
            label: r.flags.label(),
            n: r.n,
            accuracy: r.accuracy,
            faithfulness: r.faithfulness_proxy,
        })
        .collect();
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then_with(|| a.flags.key().cmp(&b.flags.key())));
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(flags: AblationFlags, n: usize, correct: usize) -> EvalReport {
        EvalReport {
            flags,
            n,
            n_correct: correct,
            accuracy: correct as f64 / n as f64,
            n_unparsed: 0,
            faithfulness_proxy: 0.5,
            records: Vec::new(),
        }
    }

    #[test]
    fn faithfulness_cases() {
        let ctx = ["The NWDAF collects analytics data from network functions."];
        assert_eq!(faithfulness_proxy("NWDAF collects analytics data", &ctx), 1.0);
        assert_eq!(faithfulness_proxy("quantum banana", &ctx), 0.0);
        assert_eq!(faithfulness_proxy("NWDAF zebra analytics giraffe", &ctx), 0.5);
        assert_eq!(faithfulness_proxy("", &ctx), 1.0);
        assert_eq!(faithfulness_proxy("the of", &[]), 1.0);
    }

    #[test]
    fn teleqna_and_plain_forms() {
        let json = r#"{
            "question 0": {"question": "What does NWDAF stand for?", "option 1": "a", "option 2": "b",
                           "option 3": "c", "answer": "option 2: b", "explanation": "because", "category": "Standards"},
            "question 1": {"question": "Unlabeled?", "option 1": "x", "option 2": "y"}
        }"#;
        let qs = parse_questions(json).unwrap();
        assert_eq!(qs[0].id.as_deref(), Some("question 0"));
        assert_eq!(qs[0].options, ["a", "b", "c"]);
        assert_eq!(qs[0].answer_index, Some(2));
        assert_eq!(qs[0].explanation.as_deref(), Some("because"));
        assert_eq!(qs[1].answer_index, None);

        let plain = r#"[{"question": "Q?", "options": ["a", "b", "c", "d", "e"], "answer_index": 5}]"#;
        let qs = parse_questions(plain).unwrap();
        assert_eq!(qs[0].answer_index, Some(5));
        assert_eq!(qs[0].id, None);

        assert!(parse_questions(r#"[{"question": "Q?", "options": ["a"], "answer_index": 1}]"#).is_err());
        assert!(parse_questions(r#"[{"question": "Q?", "options": ["a", "b"], "answer_index": 3}]"#).is_err());
    }

    #[test]
    fn comparison_ordering() {
        let sweep = AblationFlags::sweep();
        assert_eq!(sweep.len(), 16);
        let single = compare_reports(&[report(sweep[3], 4, 3)]).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].accuracy, 0.75);

        let t = compare_reports(&[report(sweep[9], 4, 2), report(sweep[2], 4, 2), report(sweep[15], 4, 4)]).unwrap();
        let order: Vec<_> = t.rows.iter().map(|r| r.flags).collect();
        assert_eq!(order, vec![sweep[15], sweep[2], sweep[9]]);
        assert!(t.render().lines().count() == 4);
        assert!(compare_reports(&[]).is_err());
    }

    #[test]
    fn report_json_schema() {
        let mut r = report(AblationFlags::all_on(), 2, 1);
        r.records = vec![
            QuestionRecord { qid: "q0".into(), predicted: Some(1), gold: Some(1), contexts: vec!["d#0".into()] },
            QuestionRecord { qid: "q1".into(), predicted: None, gold: Some(2), contexts: vec![] },
        ];
        let v = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["accuracy", "faithfulness", "flags", "n", "records", "unparsed"]);
        assert_eq!(v["flags"], serde_json::json!({"SE": true, "RR": true, "SC": true, "MC": true}));
        assert_eq!(v["records"][1]["predicted"], serde_json::Value::Null);
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn labels() {
        assert_eq!(AblationFlags::all_on().label(), "SE+RR+SC+MC");
        assert_eq!(AblationFlags::sweep()[0].label(), "none");
    }
}
