//! Okapi BM25 over lowercased tokens.
//!
//! Per query term `q` and chunk `D`:
//!
//! ```text
//!            f(q,D) · (k1 + 1)                        N − N(q) + 0.5
//! ─────────────────────────────────────────── · ln( ────────────── + 1 )
//! f(q,D) + k1 · (1 − b + b · dl / adl)                N(q) + 0.5
//! ```
//!
//! The `+ 1` inside the logarithm keeps IDF strictly positive even for terms
//! present in every chunk.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::chunking::Chunk;
use crate::error::{Error, Result};
use crate::retrieval::{ScoreSource, ScoredChunk};
use crate::text::index_terms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// IDF with the `+ 1` smoothing, natural log.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let nq = doc_freq as f64;
    ((n - nq + 0.5) / (nq + 0.5) + 1.0).ln()
}

/// Saturated, length-normalized term-frequency factor.
pub fn tf_factor(tf: u32, doc_len: u32, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let f = f64::from(tf);
    let Bm25Params { k1, b } = params;
    f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * f64::from(doc_len) / avg_doc_len))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    chunk_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    /// term → (chunk ordinal, tf), ordinals ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    params: Bm25Params,
    lookup: HashMap<String, u32>,
}

impl Bm25Index {
    pub fn build(chunks: &[Chunk], params: Bm25Params) -> Result<Self> {
        let docs: Vec<(&str, &str)> = chunks.iter().map(|c| (c.id.as_str(), c.text.as_str())).collect();
        Self::build_from_texts(&docs, params)
    }

    /// Builds from `(chunk_id, text)` pairs.
    pub fn build_from_texts(docs: &[(&str, &str)], params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Error::InvalidArgument("cannot build BM25 index over zero chunks".into()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (ordinal, (_, text)) in docs.iter().enumerate() {
            let terms = index_terms(text);
            doc_len.push(terms.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (t, tf) in counts {
                postings.entry(t).or_default().push((ordinal as u32, tf));
            }
        }
        let chunk_ids = docs.iter().map(|(id, _)| id.to_string()).collect();
        Self::from_parts(chunk_ids, postings, params)
    }

    /// Assembles an index from its persisted parts. Document lengths are the
    /// per-chunk sums of term frequencies.
    pub(crate) fn from_parts(
        chunk_ids: Vec<String>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
        params: Bm25Params,
    ) -> Result<Self> {
        params.validate()?;
        let mut lookup = HashMap::with_capacity(chunk_ids.len());
        for (i, id) in chunk_ids.iter().enumerate() {
            if lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::Corrupt(format!("duplicate chunk id {id:?}")));
            }
        }
        let mut doc_len = vec![0u32; chunk_ids.len()];
        for list in postings.values() {
            for &(ordinal, tf) in list {
                let slot = doc_len
                    .get_mut(ordinal as usize)
                    .ok_or_else(|| Error::Corrupt(format!("posting ordinal {ordinal} out of range")))?;
                *slot += tf;
            }
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_len = if chunk_ids.is_empty() {
            0.0
        } else {
            total as f64 / chunk_ids.len() as f64
        };
        Ok(Bm25Index {
            chunk_ids,
            doc_len,
            avg_doc_len,
            postings,
            params,
            lookup,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn doc_len(&self, chunk_id: &str) -> Option<u32> {
        self.lookup.get(chunk_id).map(|&i| self.doc_len[i as usize])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self) -> &BTreeMap<String, Vec<(u32, u32)>> {
        &self.postings
    }

    /// Postings with chunk ids instead of ordinals.
    pub fn postings_for(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings.get(term).map_or_else(Vec::new, |list| {
            list.iter()
                .map(|&(o, tf)| (self.chunk_ids[o as usize].as_str(), tf))
                .collect()
        })
    }

    fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        self.postings.get(term).map_or(0, |list| {
            list.binary_search_by_key(&ordinal, |&(o, _)| o)
                .map_or(0, |i| list[i].1)
        })
    }

    fn term_score(&self, tf: u32, ordinal: u32, doc_freq: usize) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        tf_factor(tf, self.doc_len[ordinal as usize], self.avg_doc_len, self.params)
            * idf(self.doc_count(), doc_freq)
    }

    /// Sum of per-term scores; `query_terms` are matched as given (already
    /// lowercased) and repeated terms count repeatedly.
    pub fn score(&self, query_terms: &[String], chunk_id: &str) -> Result<f64> {
        let &ordinal = self
            .lookup
            .get(chunk_id)
            .ok_or_else(|| Error::UnknownChunk(chunk_id.to_string()))?;
        Ok(query_terms
            .iter()
            .map(|t| self.term_score(self.term_frequency(t, ordinal), ordinal, self.doc_freq(t)))
            .sum())
    }

    /// Top-`top_k` chunks containing at least one query term, by score
    /// descending then chunk id ascending.
    pub fn search(&self, query: &str, top_k: usize) -> Vec<ScoredChunk> {
        let terms = index_terms(query);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in &terms {
            let Some(list) = self.postings.get(t) else { continue };
            for &(ordinal, tf) in list {
                *acc.entry(ordinal).or_insert(0.0) += self.term_score(tf, ordinal, list.len());
            }
        }
        let mut scored: Vec<ScoredChunk> = acc
            .into_iter()
            .map(|(o, score)| ScoredChunk::new(&self.chunk_ids[o as usize], score, ScoreSource::Keyword))
            .collect();
        crate::retrieval::sort_by_score(&mut scored);
        scored.truncate(top_k);
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(docs: &[(&str, &str)], k1: f64, b: f64) -> Bm25Index {
        Bm25Index::build_from_texts(docs, Bm25Params { k1, b }).unwrap()
    }

    const NWDAF: [(&str, &str); 3] = [
        ("D1", "nwdaf collects data"),
        ("D2", "nwdaf nwdaf analytics"),
        ("D3", "ue attaches"),
    ];

    #[test]
    fn single_chunk_statistics() {
        let idx = index(&[("c", "a b a")], 1.5, 0.75);
        assert_eq!(idx.postings_for("a"), vec![("c", 2)]);
        assert_eq!(idx.postings_for("b"), vec![("c", 1)]);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avg_doc_len(), 3.0);
    }

    #[test]
    fn nwdaf_hand_fixture() {
        // dl = (3, 3, 2), adl = 8/3, N = 3, N(q) = 2, IDF = ln 1.6
        let idx = index(&NWDAF, 1.5, 0.75);
        let q = vec!["nwdaf".to_string()];
        let d1 = idx.score(&q, "D1").unwrap();
        let d2 = idx.score(&q, "D2").unwrap();
        // D1: 2.5 / (1 + 1.5 * (0.25 + 0.75 * 9/8)) * ln 1.6
        assert!((d1 - 2.5 / 2.640625 * 1.6f64.ln()).abs() < 1e-12);
        assert!((d1 - 0.444974).abs() < 1e-6);
        assert!((d2 - 0.645499).abs() < 1e-6);
        assert_eq!(idx.score(&q, "D3").unwrap(), 0.0);
        assert!(matches!(idx.score(&q, "D9"), Err(Error::UnknownChunk(_))));

        let hits: Vec<_> = idx.search("nwdaf", 2).into_iter().map(|s| s.chunk_id).collect();
        assert_eq!(hits, ["D2", "D1"]);
        assert!(idx.search("zzz unknown", 5).is_empty());
        assert_eq!(idx.search("NWDAF ue", 10).len(), 3);
    }

    #[test]
    fn nwdaf_without_length_normalization() {
        // b = 0: TF parts are exactly 1.0 and 5/3.5
        let idx = index(&NWDAF, 1.5, 0.0);
        let q = vec!["nwdaf".to_string()];
        assert!((idx.score(&q, "D1").unwrap() - 0.4700).abs() < 1e-3);
        assert!((idx.score(&q, "D2").unwrap() - 0.6714).abs() < 1e-3);
    }

    #[test]
    fn identical_chunks_share_doc_freq() {
        let idx = index(&[("a", "x y"), ("b", "x y"), ("c", "x y")], 1.5, 0.75);
        assert_eq!(idx.doc_freq("x"), 3);
        assert_eq!(idx.doc_freq("y"), 3);
    }

    #[test]
    fn idf_strictly_positive() {
        for n in 1..=60 {
            for nq in 0..=n {
                assert!(idf(n, nq) > 0.0, "N={n} N(q)={nq}");
            }
        }
        let idx = index(&[("a", "x"), ("b", "x y")], 1.5, 0.75);
        assert!(idx.score(&["x".into()], "a").unwrap() > 0.0);
    }

    #[test]
    fn zero_b_ignores_length() {
        let idx = index(&[("short", "t"), ("long", "t u v w x y z")], 1.2, 0.0);
        let q = vec!["t".to_string()];
        assert_eq!(idx.score(&q, "short").unwrap(), idx.score(&q, "long").unwrap());
    }

    #[test]
    fn saturating_in_term_frequency() {
        let p = Bm25Params::default();
        let s: Vec<f64> = (1..=10).map(|f| tf_factor(f, 20, 20.0, p)).collect();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(s.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] <= 0.0));
    }

    #[test]
    fn log_base_does_not_change_ranking() {
        let docs = [
            ("a", "radio access network slice"),
            ("b", "network network slice"),
            ("c", "core network function slice slice"),
            ("d", "radio radio"),
        ];
        let idx = index(&docs, 1.5, 0.75);
        let q: Vec<String> = ["network", "slice", "radio"].iter().map(|s| s.to_string()).collect();
        let mut natural: Vec<(String, f64)> = docs
            .iter()
            .map(|(id, _)| (id.to_string(), idx.score(&q, id).unwrap()))
            .collect();
        let mut base10: Vec<(String, f64)> = natural
            .iter()
            .map(|(id, s)| (id.clone(), s / std::f64::consts::LN_10))
            .collect();
        natural.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        base10.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let ids = |v: &[(String, f64)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&natural), ids(&base10));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Bm25Index::build_from_texts(&[], Bm25Params::default()).is_err());
        assert!(Bm25Index::build_from_texts(&[("a", "x")], Bm25Params { k1: 0.0, b: 0.5 }).is_err());
        assert!(Bm25Index::build_from_texts(&[("a", "x")], Bm25Params { k1: 1.0, b: 1.5 }).is_err());
    }
}
