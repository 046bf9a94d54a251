//! Whitespace-and-punctuation tokenizer shared by token budgets, BM25 and the
//! lexical reference scorers.

use std::collections::BTreeSet;

/// Splits `text` on whitespace, then splits each word's leading and trailing
/// runs of non-alphanumeric characters off as their own tokens.
///
/// `"NWDAF (5G)."` yields `NWDAF`, `(`, `5G`, `).`.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        split_word(word, &mut out);
    }
    out
}

fn split_word<'a>(word: &'a str, out: &mut Vec<&'a str>) {
    let first = word.char_indices().find(|(_, c)| c.is_alphanumeric());
    let Some((start, _)) = first else {
        out.push(word);
        return;
    };
    let (last, last_ch) = word
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .expect("a word with a first alphanumeric char has a last one");
    let end = last + last_ch.len_utf8();
    if start > 0 {
        out.push(&word[..start]);
    }
    out.push(&word[start..end]);
    if end < word.len() {
        out.push(&word[end..]);
    }
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace()
        .map(|w| {
            let mut buf = Vec::with_capacity(3);
            split_word(w, &mut buf);
            buf.len()
        })
        .sum()
}

/// Lowercased tokens, as indexed by BM25.
pub fn index_terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(str::to_lowercase).collect()
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me", "more", "most",
    "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other",
    "our", "out", "over", "own", "same", "shall", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where",
    "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

pub fn is_stop_word(term: &str) -> bool {
    STOP_WORDS.binary_search(&term).is_ok()
}

/// Lowercased alphanumeric-bearing tokens with stop-words removed.
pub fn content_terms(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .filter(|t| !is_stop_word(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stop_words_sorted() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn counts() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("hello world"), 2);
        // NWDAF | ( | 5G | ).
        assert_eq!(tokenize("NWDAF (5G)."), vec!["NWDAF", "(", "5G", ")."]);
        assert_eq!(count_tokens("NWDAF (5G)."), 4);
        assert_eq!(tokenize("-- CH14-V8,"), vec!["--", "CH14-V8", ","]);
    }

    #[test]
    fn content_terms_drop_stop_words_and_punctuation() {
        let terms = content_terms("What is the role of the NWDAF?");
        assert_eq!(
            terms.into_iter().collect::<Vec<_>>(),
            vec!["nwdaf".to_string(), "role".to_string()]
        );
    }

    proptest! {
        #[test]
        fn additive_under_concatenation(a in "\\PC{0,40}", b in "\\PC{0,40}") {
            let joined = format!("{a} {b}");
            prop_assert_eq!(count_tokens(&joined), count_tokens(&a) + count_tokens(&b));
            prop_assert_eq!(tokenize(&joined).len(), count_tokens(&joined));
        }
    }
}
