//! Frequency-based candidate selection for new whole-word tokens.

use std::collections::HashMap;

use super::{Tokenizer, Vocab};

/// Characters that disqualify a word. Digits are excluded separately.
pub const EXCLUDED_CHARS: &str = "\"[]{}()<>.,;:!?@#$%";

#[derive(Debug, Clone, Copy)]
pub struct SelectOptions {
    pub min_eval_count: usize,
    pub min_corpus_count: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            min_eval_count: 5,
            min_corpus_count: 25,
        }
    }
}

/// The form a whole word takes as a token: preceded by a single space.
pub fn word_initial(word: &str) -> Vec<u8> {
    let mut s = Vec::with_capacity(word.len() + 1);
    s.push(b' ');
    s.extend_from_slice(word.as_bytes());
    s
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
}

fn eligible(word: &str) -> bool {
    !word
        .chars()
        .any(|c| c.is_ascii_digit() || c.is_numeric() || EXCLUDED_CHARS.contains(c))
}

/// Whole words from `eval_texts` that are not single tokens (in their
/// word-initial form), contain no digit or excluded character, and clear
/// both frequency thresholds. Ordered by evaluation count, descending,
/// then alphabetically.
pub fn select_tokens<'a, C, E>(
    corpus: C,
    eval_texts: E,
    vocab: &Vocab,
    opts: SelectOptions,
) -> Vec<String>
where
    C: IntoIterator<Item = &'a str>,
    E: IntoIterator<Item = &'a str>,
{
    let mut eval_counts: HashMap<&str, usize> = HashMap::new();
    for text in eval_texts {
        for w in words(text) {
            *eval_counts.entry(w).or_default() += 1;
        }
    }
    eval_counts.retain(|w, c| *c >= opts.min_eval_count && eligible(w));

    let mut corpus_counts: HashMap<&str, usize> = HashMap::new();
    if opts.min_corpus_count > 0 {
        for text in corpus {
            for w in words(text) {
                if eval_counts.contains_key(w) {
                    *corpus_counts.entry(w).or_default() += 1;
                }
            }
        }
    }

    let mut out: Vec<(&str, usize)> = eval_counts
        .into_iter()
        .filter(|(w, _)| corpus_counts.get(w).copied().unwrap_or(0) >= opts.min_corpus_count)
        .filter(|(w, _)| vocab.encode(&word_initial(w)).len() > 1)
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    out.into_iter().map(|(w, _)| w.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_stripped_at_boundaries() {
        let v = Vocab::bytes_only();
        let got = select_tokens(
            std::iter::empty(),
            ["foo. foo! foo, foo; foo foo"],
            &v,
            SelectOptions {
                min_eval_count: 5,
                min_corpus_count: 0,
            },
        );
        assert_eq!(got, vec!["foo".to_string()]);
    }

    #[test]
    fn excluded_characters_and_digits() {
        let v = Vocab::bytes_only();
        let text = "a(b a(b a(b a(b a(b x1 x1 x1 x1 x1 ok ok ok ok ok";
        let got = select_tokens(
            std::iter::empty(),
            [text],
            &v,
            SelectOptions {
                min_eval_count: 5,
                min_corpus_count: 0,
            },
        );
        assert_eq!(got, vec!["ok".to_string()]);
    }

    #[test]
    fn single_tokens_are_skipped() {
        let v = crate::fixture::palatable_vocab();
        // " pal" is one token, " palatable" is three
        let text = "pal pal pal pal pal palatable palatable palatable palatable palatable";
        let got = select_tokens(
            [text],
            [text],
            &v,
            SelectOptions {
                min_eval_count: 5,
                min_corpus_count: 5,
            },
        );
        assert_eq!(got, vec!["palatable".to_string()]);
    }
}
