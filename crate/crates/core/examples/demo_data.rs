//! Writes a planted-evidence corpus, its question file and a config into a
//! directory, ready for `specqa ingest`.
//!
//! cargo run -p specqa --example demo_data -- DIR [SEED]

use std::fs;
use std::path::PathBuf;

use serde_json::json;
use specqa::synthetic::planted_qa;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: demo_data DIR [SEED]")?);
    let seed: u64 = args.next().map_or(Ok(11), |s| s.parse())?;
    fs::create_dir_all(&dir)?;

    let set = planted_qa(seed, 20, 8);
    let corpus: String = set
        .documents
        .iter()
        .map(|d| serde_json::to_string(d).map(|s| s + "\n"))
        .collect::<Result<_, _>>()?;
    fs::write(dir.join("corpus.jsonl"), corpus)?;

    let questions: Vec<_> = set
        .questions
        .iter()
        .map(|q| json!({"id": q.id, "question": q.question, "options": q.options, "answer_index": q.answer_index}))
        .collect();
    fs::write(dir.join("questions.json"), serde_json::to_string_pretty(&questions)? + "\n")?;

    let config = json!({
        "corpus": "corpus.jsonl",
        "workdir": "work",
        "chunking": {"fixed_chunk_tokens": 128, "fixed_overlap_tokens": 16},
        "generator": {"kind": "stub-oracle"}
    });
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote corpus.jsonl, questions.json and config.json to {}", dir.display());
    Ok(())
}
