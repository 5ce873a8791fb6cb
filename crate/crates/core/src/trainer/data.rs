use crate::alignment::{align, AlignOptions, AlignmentMap};
use crate::corpus::{Snippet, SnippetSet};
use crate::error::{Error, Result};
use crate::tokenizer::{ExtendedVocab, Tokenizer};

/// A snippet tokenized both ways and aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub target: String,
    pub target_id: u32,
    /// `[BOS]` plus the original tokenization.
    pub teacher_ids: Vec<u32>,
    /// `[BOS]` plus the extended tokenization.
    pub student_ids: Vec<u32>,
    pub map: AlignmentMap,
}

pub fn prepare_snippet(
    snippet: &Snippet,
    ext: &ExtendedVocab,
    opts: AlignOptions,
) -> Result<Prepared> {
    let target_id = ext
        .find(snippet.target.as_bytes())
        .ok_or_else(|| Error::Config(format!("{:?} is not an added token", snippet.target)))?
        .id;
    let bos = ext.base().bos();
    let mut teacher_ids = vec![bos];
    teacher_ids.extend(ext.encode_base(snippet.text.as_bytes()));
    let mut student_ids = vec![bos];
    student_ids.extend(ext.encode(snippet.text.as_bytes()));
    let map = align(&teacher_ids, &student_ids, ext, opts)?;
    Ok(Prepared {
        target: snippet.target.clone(),
        target_id,
        teacher_ids,
        student_ids,
        map,
    })
}

/// Prepares every snippet in target order.
pub fn prepare_all(
    set: &SnippetSet,
    ext: &ExtendedVocab,
    opts: AlignOptions,
) -> Result<Vec<Prepared>> {
    set.iter().map(|s| prepare_snippet(s, ext, opts)).collect()
}
