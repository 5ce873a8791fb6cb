use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matcher::Matcher;
use super::snippet::{Snippet, SnippetSet, SnippetSource};
use crate::error::{Error, Result};
use crate::tokenizer::{ExtendedVocab, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieveOptions {
    pub n_per_target: usize,
    pub window_tokens: usize,
    pub seed: u64,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            n_per_target: 25,
            window_tokens: 50,
            seed: 0,
        }
    }
}

/// A target that had fewer usable hits than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deficit {
    pub target: String,
    pub found: usize,
    pub wanted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieval {
    pub snippets: SnippetSet,
    pub deficits: Vec<Deficit>,
}

/// Uniform reservoir sampling (Algorithm R). Item `i` (0-based) past the
/// first `k` draws `j` uniformly from `0..=i` and replaces slot `j` if
/// `j < k`.
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    pub items: Vec<T>,
    pub seen: usize,
    cap: usize,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize, rng: ChaCha8Rng) -> Self {
        Self {
            items: Vec::with_capacity(cap),
            seen: 0,
            cap,
            rng,
        }
    }

    pub fn offer(&mut self, item: T) {
        let i = self.seen;
        self.seen += 1;
        if i < self.cap {
            self.items.push(item);
        } else {
            let j = self.rng.random_range(0..=i);
            if j < self.cap {
                self.items[j] = item;
            }
        }
    }
}

/// Random stream used to sample snippets for one target.
pub fn target_rng(seed: u64, target: &str) -> ChaCha8Rng {
    crate::seed::rng(seed, &format!("retrieve/{target}"))
}

/// Byte offset of every token start plus the end of the text.
fn token_offsets(ext: &ExtendedVocab, ids: &[u32]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(ids.len() + 1);
    let mut pos = 0;
    offs.push(0);
    for &id in ids {
        pos += ext.token_bytes(id).map_or(0, <[u8]>::len);
        offs.push(pos);
    }
    offs
}

/// Cuts a window of at most `window` original-vocabulary tokens around the
/// byte range `start..end` of `doc`, with the target roughly centred and at
/// least one token of left context when the document has any. Returns the
/// window text and the target's span inside it.
pub fn extract_window(
    doc: &str,
    ids: &[u32],
    start: usize,
    end: usize,
    ext: &ExtendedVocab,
    window: usize,
) -> Option<(String, [usize; 2])> {
    let offs = token_offsets(ext, ids);
    let n_tok = ids.len();
    let a = offs.partition_point(|&o| o <= start).saturating_sub(1);
    let b = offs.partition_point(|&o| o < end).min(n_tok);
    let inner = b - a;
    if inner + 1 > window {
        return None;
    }
    let spare = window - inner;
    let mut left = (spare / 2).max(1).min(a);
    let mut right = (spare - left).min(n_tok - b);
    left = (spare - right).min(a);
    loop {
        let (mut lo, mut hi) = (offs[a - left], offs[b + right]);
        lo = lo.min(start);
        hi = hi.max(end);
        while lo < start && !doc.is_char_boundary(lo) {
            lo += 1;
        }
        while hi > end && !doc.is_char_boundary(hi) {
            hi -= 1;
        }
        let text = &doc[lo..hi];
        if ext.encode_base(text.as_bytes()).len() <= window {
            return Some((text.to_string(), [start - lo, end - lo]));
        }
        if left == 0 && right == 0 {
            return None;
        }
        if right >= left {
            right -= 1;
        } else {
            left -= 1;
        }
    }
}

/// Whether the extended tokenization of `text` places `target_id` exactly
/// at `span`.
fn holds_target(ext: &ExtendedVocab, text: &str, span: [usize; 2], target_id: u32) -> bool {
    let ids = ext.encode(text.as_bytes());
    let offs = token_offsets(ext, &ids);
    ids.iter()
        .zip(&offs)
        .any(|(&id, &o)| id == target_id && o == span[0])
}

/// Scans `docs` once and keeps a uniform sample of at most `n_per_target`
/// windows per target.
pub fn retrieve_snippets<S: AsRef<str>>(
    docs: &[S],
    targets: &[String],
    ext: &ExtendedVocab,
    opts: RetrieveOptions,
) -> Result<Retrieval> {
    let ids: Vec<u32> = targets
        .iter()
        .map(|t| {
            ext.find(t.as_bytes())
                .map(|a| a.id)
                .ok_or_else(|| Error::Config(format!("{t:?} is not an added token")))
        })
        .collect::<Result<_>>()?;
    let matcher = Matcher::new(targets)?;
    let mut reservoirs: Vec<Reservoir<Snippet>> = targets
        .iter()
        .map(|t| Reservoir::new(opts.n_per_target, target_rng(opts.seed, t)))
        .collect();
    for (doc_id, doc) in docs.iter().enumerate() {
        let doc = doc.as_ref();
        let hits = matcher.find_leftmost_longest(doc.as_bytes());
        if hits.is_empty() {
            continue;
        }
        let doc_ids = ext.encode_base(doc.as_bytes());
        for m in hits {
            let Some((text, span)) =
                extract_window(doc, &doc_ids, m.start, m.end, ext, opts.window_tokens)
            else {
                continue;
            };
            if !holds_target(ext, &text, span, ids[m.pattern]) {
                continue;
            }
            reservoirs[m.pattern].offer(Snippet {
                target: targets[m.pattern].clone(),
                text,
                span,
                provenance: SnippetSource::Retrieved,
                doc_id: Some(doc_id),
            });
        }
    }
    let mut deficits = Vec::new();
    let mut snippets = Vec::new();
    for (t, r) in targets.iter().zip(reservoirs) {
        if r.seen < opts.n_per_target {
            deficits.push(Deficit {
                target: t.clone(),
                found: r.seen,
                wanted: opts.n_per_target,
            });
        }
        snippets.extend(r.items);
    }
    Ok(Retrieval {
        snippets: SnippetSet::from_snippets(snippets),
        deficits,
    })
}
