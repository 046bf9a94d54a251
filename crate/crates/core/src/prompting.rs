//! Prompt assembly, generation and answer extraction.
//!
//! Rendered layout (sections separated by a blank line):
//!
//! ```text
//! <instruction text>
//!
//! Context 1: <chunk text>
//!
//! Context 2: <chunk text>
//!
//! Question: <question>
//!
//! Options:
//! 1) <option>
//! 2) <option>
//!
//! Answer:
//! ```

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::McqItem;
use crate::remote::{GenerateRequest, GenerateResponse, JsonClient};
use crate::retrieval::ContextBundle;
use crate::text::{content_terms, count_tokens};

pub const ANSWER_CUE: &str = "Answer:";

pub const DEFAULT_INSTRUCTIONS: &str = "You are answering a multiple-choice question about \
telecommunications standards. Read the context passages below before answering and base your \
answer on them rather than on prior knowledge. Pay close attention to key terms in the question \
such as \"main\" and \"primary\", and interpret telecom-specific terms and abbreviations as they \
are used in the context. Choose exactly one option and reply only in the form \"Answer: <option \
number>\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub instruction_text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction_text: DEFAULT_INSTRUCTIONS.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, contexts: &[&str], q: &McqItem) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction_text);
        out.push_str("\n\n");
        for (i, c) in contexts.iter().enumerate() {
            out.push_str(&format!("Context {}: {}\n\n", i + 1, c));
        }
        out.push_str("Question: ");
        out.push_str(&q.question);
        out.push_str("\n\nOptions:\n");
        for (i, o) in q.options.iter().enumerate() {
            out.push_str(&format!("{}) {}\n", i + 1, o));
        }
        out.push('\n');
        out.push_str(ANSWER_CUE);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub tokens: usize,
    /// Leading bundle entries that fit; the rest were dropped.
    pub contexts_used: usize,
}

/// Renders with as many leading contexts as fit in `budget_tokens`, dropping
/// whole contexts from the tail.
pub fn assemble_prompt(
    tpl: &PromptTemplate,
    bundle: &ContextBundle,
    q: &McqItem,
    budget_tokens: usize,
) -> Result<AssembledPrompt> {
    let texts = bundle.texts();
    let scaffold = count_tokens(&tpl.render(&[], q));
    if scaffold > budget_tokens {
        return Err(Error::ScaffoldExceedsBudget {
            needed: scaffold,
            budget: budget_tokens,
        });
    }
    // Each context adds its own tokens plus "Context", "n", ":".
    let mut used = 0;
    let mut total = scaffold;
    for (i, t) in texts.iter().enumerate() {
        let cost = count_tokens(t) + count_tokens(&format!("Context {}:", i + 1));
        if total + cost > budget_tokens {
            break;
        }
        total += cost;
        used += 1;
    }
    let text = tpl.render(&texts[..used], q);
    let tokens = count_tokens(&text);
    debug_assert_eq!(tokens, total);
    Ok(AssembledPrompt {
        text,
        tokens,
        contexts_used: used,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Picks the option with the largest content-term overlap with the contexts.
    #[default]
    StubOracle,
    /// Uniform over options, seeded by `seed` and the prompt text.
    StubRandom { seed: u64 },
    Remote { endpoint: String, max_tokens: usize },
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    client: Option<JsonClient>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Self {
        let client = match &spec {
            GeneratorSpec::Remote { endpoint, .. } => Some(JsonClient::new(endpoint)),
            _ => None,
        };
        Generator { spec, client }
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn generate(&self, prompt: &str) -> Result<String> {
        if prompt.is_empty() {
            return Err(Error::InvalidArgument("empty prompt".into()));
        }
        match &self.spec {
            GeneratorSpec::StubOracle => {
                let parsed = ParsedPrompt::parse(prompt);
                let contexts = content_terms(&parsed.contexts.join(" "));
                let mut best = (0usize, 1usize);
                for (i, option) in parsed.options.iter().enumerate() {
                    let overlap = content_terms(option).iter().filter(|t| contexts.contains(*t)).count();
                    if overlap > best.0 {
                        best = (overlap, i + 1);
                    }
                }
                Ok(format!("{ANSWER_CUE} {}", best.1))
            }
            GeneratorSpec::StubRandom { seed } => {
                let n = ParsedPrompt::parse(prompt).options.len().max(1);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ prompt_hash(prompt));
                Ok(format!("{ANSWER_CUE} {}", rng.gen_range(1..=n)))
            }
            GeneratorSpec::Remote { max_tokens, .. } => {
                let client = self.client.as_ref().expect("remote generator has a client");
                let reply: GenerateResponse = client.post(
                    "generate",
                    &GenerateRequest {
                        prompt,
                        max_tokens: *max_tokens,
                    },
                )?;
                Ok(reply.text)
            }
        }
    }
}

pub fn generate(prompt: &str, spec: &GeneratorSpec) -> Result<String> {
    Generator::new(spec.clone()).generate(prompt)
}

fn prompt_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Sections recovered from a prompt in the rendered layout.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub contexts: Vec<String>,
    pub options: Vec<String>,
}

impl ParsedPrompt {
    pub fn parse(prompt: &str) -> Self {
        let Some(q_at) = prompt.rfind("\n\nQuestion: ") else {
            return ParsedPrompt::default();
        };
        let head = &prompt[..q_at];
        let tail = &prompt[q_at..];

        let mut contexts = Vec::new();
        if let Some(start) = head.find("\n\nContext 1: ") {
            let mut rest = &head[start + 2..];
            let mut n = 1;
            loop {
                let label = format!("Context {n}: ");
                let body = &rest[label.len()..];
                let next = format!("\n\nContext {}: ", n + 1);
                match body.find(&next) {
                    Some(end) => {
                        contexts.push(body[..end].to_string());
                        rest = &body[end + 2..];
                        n += 1;
                    }
                    None => {
                        contexts.push(body.trim_end_matches('\n').to_string());
                        break;
                    }
                }
            }
        }

        let mut options = Vec::new();
        if let Some(opt_at) = tail.find("\n\nOptions:\n") {
            for line in tail[opt_at + 11..].lines() {
                let expected = format!("{}) ", options.len() + 1);
                match line.strip_prefix(&expected) {
                    Some(text) => options.push(text.to_string()),
                    None => break,
                }
            }
        }
        ParsedPrompt { contexts, options }
    }
}

fn patterns() -> &'static [Regex; 3] {
    static PATTERNS: OnceLock<[Regex; 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            Regex::new(r"(?i)answer:\s*(?:option\s*)?(\d+)").unwrap(),
            Regex::new(r"(?i)\boption\s*(\d+)").unwrap(),
            Regex::new(r"(?m)^[ \t]*(\d+)\)?[ \t]*$").unwrap(),
        ]
    })
}

/// Tries, in order: `Answer: <i>` (also `Answer: option <i>`), `option <i>`,
/// then a line holding only `<i>` or `<i>)`. The first pattern that matches
/// decides; its index must lie in `1..=n_options`, otherwise `None`.
pub fn extract_answer(output: &str, n_options: usize) -> Option<usize> {
    for re in patterns() {
        if let Some(cap) = re.captures(output) {
            let i: usize = cap[1].parse().ok()?;
            return (1..=n_options).contains(&i).then_some(i);
        }
    }
    None
}
