use std::collections::HashMap;

use specqa::chunking::{semantic_breakpoints, semantic_chunk, window_dissimilarities};
use specqa::corpus::split_sentences;
use specqa::embedding::Embedder;
use specqa::{Document, EmbedderSpec, SemanticChunkConfig};

fn topic_doc() -> Document {
    let alpha = [
        "Alpha carriers aggregate alpha spectrum.",
        "The alpha band keeps alpha guard slots.",
        "Alpha cells share alpha timing.",
        "Each alpha carrier reports alpha load.",
        "Alpha scheduling favours alpha traffic.",
        "An alpha anchor holds alpha control.",
        "Alpha paging uses alpha frames.",
        "Alpha beams track alpha users.",
        "Alpha power follows alpha limits.",
        "Alpha handover keeps alpha context.",
    ];
    let omega = [
        "Omega nodes archive omega records.",
        "The omega store keeps omega logs.",
        "Omega queries scan omega tables.",
        "Each omega record lists omega fields.",
        "Omega retention bounds omega history.",
        "An omega index speeds omega lookups.",
        "Omega exports carry omega checksums.",
        "Omega replicas mirror omega shards.",
        "Omega audits check omega access.",
        "Omega purges clear omega backlog.",
    ];
    Document {
        id: "topics".into(),
        title: "two topics".into(),
        source: "test".into(),
        text: alpha.iter().chain(omega.iter()).copied().collect::<Vec<_>>().join(" "),
    }
}

/// Exact cosine over raw 3-gram string counts, sharing no code with the
/// hashed projection.
fn trigram_cosine(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> HashMap<String, f64> {
        let chars: Vec<char> = format!(" {} ", s.to_lowercase()).chars().collect();
        let mut m = HashMap::new();
        for w in chars.windows(3) {
            *m.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
        }
        m
    }
    let (ga, gb) = (grams(a), grams(b));
    let dot: f64 = ga.iter().map(|(k, v)| v * gb.get(k).copied().unwrap_or(0.0)).sum();
    let na = ga.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = gb.values().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn topic_boundary_is_the_sharpest_window_change() {
    let doc = topic_doc();
    let sentences = split_sentences(&doc);
    assert_eq!(sentences.len(), 20);
    let embedder = Embedder::new(EmbedderSpec::default()).unwrap();
    let d = window_dissimilarities(&sentences, 3, &embedder).unwrap();
    assert_eq!(d.len(), 17);

    let windows: Vec<String> = sentences
        .windows(3)
        .map(|w| w.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" "))
        .collect();
    let oracle: Vec<f64> = windows.windows(2).map(|p| 1.0 - trigram_cosine(&p[0], &p[1])).collect();

    // pair 8 compares sentences 8..=10 with 9..=11: the window centres sit on
    // either side of the boundary between sentences 9 and 10
    assert_eq!(argmax(&oracle), 8);
    assert_eq!(argmax(&d), 8);
    for i in 0..17 {
        let crossing = (7..=9).contains(&i);
        if !crossing {
            assert!(d[i] < d[8] && oracle[i] < oracle[8]);
        }
    }
}

#[test]
fn one_breakpoint_at_the_boundary() {
    let doc = topic_doc();
    let embedder = Embedder::new(EmbedderSpec::default()).unwrap();
    let cfg = SemanticChunkConfig {
        breakpoint_percentile: 95.0,
        buffer_size: 3,
    };
    let chunks = semantic_chunk(&doc, &cfg, &embedder).unwrap();
    let ranges: Vec<(usize, usize)> = chunks.iter().map(|c| (c.first, c.last)).collect();
    assert_eq!(ranges, [(0, 9), (10, 19)]);
    assert!(chunks[0].text.ends_with("alpha context."));
    assert!(chunks[1].text.starts_with("Omega nodes"));

    // at the default percentile the boundary is still a breakpoint
    let default = semantic_chunk(&doc, &SemanticChunkConfig::default(), &embedder).unwrap();
    assert!(default.iter().any(|c| c.last == 9));
}

#[test]
fn breakpoints_follow_strict_threshold() {
    let cfg = SemanticChunkConfig {
        breakpoint_percentile: 50.0,
        buffer_size: 1,
    };
    // threshold = median = 0.2; only values strictly above it break
    assert_eq!(semantic_breakpoints(&[0.1, 0.2, 0.3, 0.2, 0.9], &cfg), vec![2, 4]);
    assert!(semantic_breakpoints(&[0.4; 6], &cfg).is_empty());
}
