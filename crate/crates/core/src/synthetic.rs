//! Seeded synthetic corpora with planted evidence, for end-to-end checks that
//! need a known right answer.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chunking::{Chunk, ChunkStrategy};
use crate::corpus::Document;
use crate::eval::McqItem;
use crate::text::count_tokens;

const FILLER: &[&str] = &[
    "network", "radio", "access", "core", "session", "bearer", "carrier", "channel", "signal",
    "frame", "slot", "symbol", "antenna", "cell", "handover", "paging", "registration", "policy",
    "charging", "roaming", "latency", "throughput", "spectrum", "uplink", "downlink", "beam",
    "timer", "message", "interface", "node", "gateway", "subscriber", "service", "profile",
    "resource", "allocation", "scheduling", "measurement", "report", "configuration", "release",
    "security", "key", "integrity", "protection", "mobility", "tracking", "area", "identifier",
    "quality", "flow", "tunnel", "endpoint", "control", "plane", "user", "data", "packet",
];

const CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// A lowercase pseudo-word of `syllables` consonant-vowel pairs.
pub fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", CONSONANTS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A sentence of random filler words, capitalized and full-stopped.
pub fn filler_sentence(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(6..14);
    let words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect();
    format!("{}.", capitalize(&words.join(" ")))
}

pub fn random_document(rng: &mut impl Rng, id: &str, sentences: usize) -> Document {
    let text = (0..sentences).map(|_| filler_sentence(rng)).collect::<Vec<_>>().join(" ");
    Document {
        id: id.to_string(),
        title: format!("Synthetic {id}"),
        source: "synthetic".to_string(),
        text,
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSet {
    pub documents: Vec<Document>,
    pub questions: Vec<McqItem>,
    /// For each question, the evidence sentence planted in the corpus.
    pub evidence: Vec<String>,
}

impl PlantedSet {
    /// Accuracy of always answering option 1.
    pub fn first_option_rate(&self) -> f64 {
        let hits = self.questions.iter().filter(|q| q.answer_index == Some(1)).count();
        hits as f64 / self.questions.len() as f64
    }
}

/// `n_questions` five-option questions over `n_docs` documents. Each question
/// names a unique entity and topic; exactly one sentence in the corpus pairs
/// them with the correct option, and the other options appear nowhere.
pub fn planted_qa(seed: u64, n_questions: usize, n_docs: usize) -> PlantedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize| loop {
        let w = pseudo_word(rng, syllables);
        if used.insert(w.clone()) {
            return w;
        }
    };

    let mut questions = Vec::with_capacity(n_questions);
    let mut evidence = Vec::with_capacity(n_questions);
    for j in 0..n_questions {
        let entity = fresh(&mut rng, 2).to_uppercase();
        let topic = fresh(&mut rng, 3);
        let options: Vec<String> = (0..5).map(|_| fresh(&mut rng, 4)).collect();
        let gold = rng.gen_range(1..=5);
        evidence.push(format!(
            "The {entity} function applies the {} procedure for {topic} handling.",
            options[gold - 1]
        ));
        let mut q = McqItem::new(
            &format!("Which procedure does the {entity} function apply for {topic} handling?"),
            options,
            Some(gold),
        );
        q.id = Some(format!("syn-{j}"));
        questions.push(q);
    }

    let mut bodies: Vec<Vec<String>> = (0..n_docs)
        .map(|_| (0..rng.gen_range(30..45)).map(|_| filler_sentence(&mut rng)).collect())
        .collect();
    for ev in &evidence {
        let doc = rng.gen_range(0..n_docs);
        let at = rng.gen_range(0..=bodies[doc].len());
        bodies[doc].insert(at, ev.clone());
    }
    let documents = bodies
        .into_iter()
        .enumerate()
        .map(|(i, sentences)| Document {
            id: format!("doc{i:02}"),
            title: format!("Synthetic specification {i}"),
            source: "TS 99.9xx".to_string(),
            text: sentences.join(" "),
        })
        .collect();
    PlantedSet {
        documents,
        questions,
        evidence,
    }
}

#[derive(Debug, Clone)]
pub struct RareTermCorpus {
    pub chunks: Vec<Chunk>,
    pub query: String,
    pub target: String,
}

fn single_chunk(id: String, text: String) -> Chunk {
    Chunk {
        doc_id: id.clone(),
        id: format!("{id}#0"),
        first: 0,
        last: 0,
        token_count: count_tokens(&text),
        text,
        strategy: ChunkStrategy::Fixed,
    }
}

/// A chunk holding a rare identifier among many near-copies of the query that
/// use different identifiers. The near-copies dominate cosine similarity; only
/// the target contains the exact identifier token. Background chunks repeat the
/// query's other words so that those carry almost no IDF weight.
pub fn rare_term_corpus(seed: u64, distractors: usize, background: usize) -> RareTermCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rare = "CH14-V8";
    let query = format!("What does the SA5 work item {rare} specify for VoLTE roaming?");

    let mut chunks = Vec::new();
    let mut variants = HashSet::new();
    while variants.len() < distractors {
        let v = format!("CH{}-V{}", rng.gen_range(10..20), rng.gen_range(1..10));
        if v != rare {
            variants.insert(v);
        }
    }
    let mut variants: Vec<String> = variants.into_iter().collect();
    variants.sort();
    for (i, v) in variants.iter().enumerate() {
        let text = format!("What does the SA5 work item {v} specify for VoLTE roaming? Work item {v} is tracked by SA5.");
        chunks.push(single_chunk(format!("near{i:03}"), text));
    }
    for i in 0..background {
        let mut text = (0..3).map(|_| filler_sentence(&mut rng)).collect::<Vec<_>>().join(" ");
        text.push_str(" What the SA5 work item does specify for VoLTE roaming?");
        chunks.push(single_chunk(format!("bg{i:03}"), text));
    }
    let target_text = format!(
        "{} The identifier {rare} denotes this item. {}",
        filler_sentence(&mut rng),
        filler_sentence(&mut rng)
    );
    let target = single_chunk("target".to_string(), target_text);
    let target_id = target.id.clone();
    chunks.push(target);
    chunks.shuffle(&mut rng);
    RareTermCorpus {
        chunks,
        query,
        target: target_id,
    }
}
