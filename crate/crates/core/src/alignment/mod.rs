//! Mapped positions between a text's original tokenization and its
//! tokenization with added tokens.
//!
//! Positions are matched by walking both sequences by byte offset: an
//! original-vocabulary token in the extended sequence pairs with the token
//! in the original sequence that has the same id at the same byte offset.
//! Only positions that can attend to an added token are kept.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{ExtendedVocab, Tokenizer};

/// One added-token occurrence in the extended sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceSpan {
    /// Index in the extended sequence.
    pub position: usize,
    pub id: u32,
    /// Covering range `[start, end)` in the original sequence.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// `(extended index, original index)`, increasing in both.
    pub pairs: Vec<(usize, usize)>,
    pub spans: Vec<OccurrenceSpan>,
}

impl AlignmentMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Added ids that occur in the extended sequence, deduplicated, in
    /// ascending order.
    pub fn added_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.spans.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Also pair each occurrence with the last token of its original span.
    pub supervise_span_end: bool,
}

/// Start offsets of every token plus the total length.
fn offsets(ids: &[u32], ext: &ExtendedVocab, bytes: &mut Vec<u8>) -> Result<Vec<usize>> {
    let mut starts = Vec::with_capacity(ids.len());
    for &id in ids {
        starts.push(bytes.len());
        let tok = ext.token_bytes(id).ok_or(Error::UnknownId {
            id,
            vocab_size: ext.size(),
        })?;
        bytes.extend_from_slice(tok);
    }
    Ok(starts)
}

pub fn align(
    original: &[u32],
    extended: &[u32],
    ext: &ExtendedVocab,
    opts: AlignOptions,
) -> Result<AlignmentMap> {
    let mut orig_text = Vec::new();
    let orig_starts = offsets(original, ext, &mut orig_text)?;
    let mut ext_text = Vec::new();
    let ext_starts = offsets(extended, ext, &mut ext_text)?;
    if orig_text != ext_text {
        return Err(Error::Alignment(
            "sequences decode to different byte strings".into(),
        ));
    }
    if let Some(&id) = original.iter().find(|&&id| ext.is_added(id)) {
        return Err(Error::Alignment(format!(
            "original sequence contains added id {id}"
        )));
    }
    let orig_end = |j: usize| orig_starts.get(j + 1).copied().unwrap_or(orig_text.len());

    let by_offset: HashMap<usize, usize> = orig_starts
        .iter()
        .enumerate()
        .map(|(j, &s)| (s, j))
        .collect();

    let mut spans = Vec::new();
    for (i, &id) in extended.iter().enumerate() {
        if !ext.is_added(id) {
            continue;
        }
        let (lo, hi) = (
            ext_starts[i],
            ext_starts[i] + ext.token_bytes(id).map_or(0, <[u8]>::len),
        );
        let start = orig_starts.partition_point(|&s| s <= lo).saturating_sub(1);
        let end = (start..original.len())
            .find(|&j| orig_end(j) >= hi)
            .map_or(original.len(), |j| j + 1);
        spans.push(OccurrenceSpan {
            position: i,
            id,
            start,
            end,
        });
    }

    let mut pairs = Vec::new();
    if let Some(first) = spans.first().map(|s| s.position) {
        for (i, &id) in extended.iter().enumerate().skip(first + 1) {
            if ext.is_added(id) {
                continue;
            }
            if let Some(&j) = by_offset.get(&ext_starts[i]) {
                if original[j] == id {
                    pairs.push((i, j));
                }
            }
        }
        if opts.supervise_span_end {
            for s in &spans {
                pairs.push((s.position, s.end - 1));
            }
            pairs.sort_unstable();
        }
    }
    Ok(AlignmentMap { pairs, spans })
}

/// Inspection dump of an alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentDump {
    pub pairs: Vec<(usize, usize)>,
    pub spans: Vec<OccurrenceSpan>,
    pub text: String,
}

pub fn debug_dump(map: &AlignmentMap, text: &str) -> AlignmentDump {
    AlignmentDump {
        pairs: map.pairs.clone(),
        spans: map.spans.clone(),
        text: text.to_string(),
    }
}
