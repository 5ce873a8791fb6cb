use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tokenizer;
use crate::error::{Error, Result};

pub const BOS_TEXT: &[u8] = b"<|bos|>";
pub const PAD_TEXT: &[u8] = b"<|pad|>";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub id: u32,
}

/// Original tokenizer τ.
///
/// Ids `0..256` are single bytes, `256` is BOS, `257` is PAD and every merge
/// appends one id after that, so ids are dense in `[0, V)`.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<Merge>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
    bos: u32,
    pad: u32,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.merges == other.merges
            && self.bos == other.bos
            && self.pad == other.pad
    }
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\n' | b'\t' | b'\r' | 0x0b | 0x0c)
}

/// Splits text into chunks that BPE merges never cross: a new chunk starts
/// at every whitespace byte that follows a non-whitespace byte, so leading
/// whitespace stays attached to the word after it.
pub fn pretokenize(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    let mut i = 1;
    std::iter::from_fn(move || {
        if start >= text.len() {
            return None;
        }
        while i < text.len() {
            if is_ws(text[i]) && !is_ws(text[i - 1]) {
                let chunk = &text[start..i];
                start = i;
                i += 1;
                return Some(chunk);
            }
            i += 1;
        }
        let chunk = &text[start..];
        start = text.len();
        Some(chunk)
    })
}

impl Vocab {
    /// Byte tokens and specials only, no merges.
    pub fn bytes_only() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(BOS_TEXT.to_vec());
        tokens.push(PAD_TEXT.to_vec());
        Self {
            tokens,
            merges: Vec::new(),
            ranks: HashMap::new(),
            bos: 256,
            pad: 257,
        }
    }

    pub(crate) fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(bytes);
        self.ranks.insert((left, right), (self.merges.len(), id));
        self.merges.push(Merge { left, right, id });
        id
    }

    /// Builds a vocabulary from merges spelled as byte strings; both halves
    /// of every merge must already be tokens.
    pub fn from_merge_strings(merges: &[(&[u8], &[u8])]) -> Result<Self> {
        let mut vocab = Self::bytes_only();
        for (l, r) in merges {
            let left = vocab.id_of(l).ok_or_else(|| {
                Error::Input(format!("{:?} is not a token", String::from_utf8_lossy(l)))
            })?;
            let right = vocab.id_of(r).ok_or_else(|| {
                Error::Input(format!("{:?} is not a token", String::from_utf8_lossy(r)))
            })?;
            vocab.push_merge(left, right);
        }
        Ok(vocab)
    }

    pub fn from_parts(
        tokens: Vec<Vec<u8>>,
        merges: Vec<Merge>,
        bos: u32,
        pad: u32,
    ) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (rank, m) in merges.iter().enumerate() {
            let n = tokens.len() as u32;
            if m.left >= n || m.right >= n || m.id >= n {
                return Err(Error::Format(format!("merge {m:?} references unknown ids")));
            }
            let mut joined = tokens[m.left as usize].clone();
            joined.extend_from_slice(&tokens[m.right as usize]);
            if joined != tokens[m.id as usize] {
                return Err(Error::Format(format!(
                    "merge {m:?} does not spell its token"
                )));
            }
            ranks.insert((m.left, m.right), (rank, m.id));
        }
        if bos as usize >= tokens.len() || pad as usize >= tokens.len() {
            return Err(Error::Format("special token ids out of range".into()));
        }
        for b in 0..=255u8 {
            if tokens.get(b as usize).map(Vec::as_slice) != Some(&[b][..]) {
                return Err(Error::Format("ids 0..256 must be the byte tokens".into()));
            }
        }
        Ok(Self {
            tokens,
            merges,
            ranks,
            bos,
            pad,
        })
    }

    pub fn bos(&self) -> u32 {
        self.bos
    }

    pub fn pad(&self) -> u32 {
        self.pad
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.bos || id == self.pad
    }

    /// Id of the (non-special) token spelling exactly `bytes`.
    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.tokens
            .iter()
            .enumerate()
            .find(|(i, t)| t.as_slice() == bytes && !self.is_special(*i as u32))
            .map(|(i, _)| i as u32)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min_by_key(|&(rank, _)| rank);
            let Some((rank, new_id)) = best else { break };
            let m = self.merges[rank];
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == m.left && ids[i + 1] == m.right {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            ids = merged;
        }
        out.extend_from_slice(&ids);
    }

    pub(crate) fn encode_into(&self, text: &[u8], out: &mut Vec<u32>) {
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk, out);
        }
    }

    pub(crate) fn to_file(&self) -> VocabFile {
        VocabFile {
            version: FORMAT_VERSION,
            base_tokens: self.tokens.iter().map(hex::encode).collect(),
            merges: self
                .merges
                .iter()
                .map(|m| [m.left, m.right, m.id])
                .collect(),
            special: Specials {
                bos: self.bos,
                pad: self.pad,
            },
        }
    }

    pub(crate) fn from_file(file: VocabFile) -> Result<Self> {
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "vocab version {} (expected {FORMAT_VERSION})",
                file.version
            )));
        }
        let tokens = file
            .base_tokens
            .iter()
            .map(|h| hex::decode(h).map_err(|e| Error::Format(format!("bad hex token: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let merges = file
            .merges
            .iter()
            .map(|&[left, right, id]| Merge { left, right, id })
            .collect();
        Self::from_parts(tokens, merges, file.special.bos, file.special.pad)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Tokenizer for Vocab {
    fn encode(&self, text: &[u8]) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_into(text, &mut out);
        out
    }

    fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let t = self.tokens.get(id as usize).ok_or(Error::UnknownId {
                id,
                vocab_size: self.tokens.len(),
            })?;
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    fn size(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Specials {
    pub bos: u32,
    pub pad: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct VocabFile {
    pub version: u32,
    pub base_tokens: Vec<String>,
    pub merges: Vec<[u32; 3]>,
    pub special: Specials,
}
