use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, VocabFile};
use super::Tokenizer;
use crate::corpus::Matcher;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddedToken {
    pub string: Vec<u8>,
    pub id: u32,
    /// Encoding of `string` under the original vocabulary.
    pub subtokens: Vec<u32>,
    /// The string is already a single original token (test fixture only).
    pub duplicate: bool,
}

impl AddedToken {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.string).into_owned()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtendOptions {
    /// Accept strings that are already single tokens. Only meant for the
    /// duplicate-token recovery fixture.
    pub allow_duplicates: bool,
}

/// Extended tokenizer τ*: the original vocabulary plus atomic added tokens
/// with ids `V, V+1, ...` in insertion order.
#[derive(Debug, Clone)]
pub struct ExtendedVocab {
    base: Vocab,
    added: Vec<AddedToken>,
    matcher: Option<Matcher>,
}

impl PartialEq for ExtendedVocab {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.added == other.added
    }
}

impl ExtendedVocab {
    pub fn new(base: Vocab, strings: &[Vec<u8>], opts: ExtendOptions) -> Result<Self> {
        let v = base.size() as u32;
        let mut seen = HashSet::new();
        let mut added = Vec::with_capacity(strings.len());
        for (k, s) in strings.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Input("added token string is empty".into()));
            }
            if !seen.insert(s.as_slice()) {
                return Err(Error::Duplicate(String::from_utf8_lossy(s).into_owned()));
            }
            let subtokens = base.encode(s);
            let duplicate = subtokens.len() == 1;
            if duplicate && !opts.allow_duplicates {
                return Err(Error::SingleToken(String::from_utf8_lossy(s).into_owned()));
            }
            added.push(AddedToken {
                string: s.clone(),
                id: v + k as u32,
                subtokens,
                duplicate,
            });
        }
        Self::assemble(base, added)
    }

    fn assemble(base: Vocab, added: Vec<AddedToken>) -> Result<Self> {
        let matcher = if added.is_empty() {
            None
        } else {
            Some(Matcher::new(
                &added
                    .iter()
                    .map(|a| a.string.as_slice())
                    .collect::<Vec<_>>(),
            )?)
        };
        Ok(Self {
            base,
            added,
            matcher,
        })
    }

    pub fn base(&self) -> &Vocab {
        &self.base
    }

    pub fn base_size(&self) -> usize {
        self.base.size()
    }

    pub fn added(&self) -> &[AddedToken] {
        &self.added
    }

    pub fn is_added(&self, id: u32) -> bool {
        (id as usize) >= self.base.size() && (id as usize) < self.size()
    }

    pub fn added_index(&self, id: u32) -> Option<usize> {
        self.is_added(id).then(|| id as usize - self.base.size())
    }

    pub fn find(&self, string: &[u8]) -> Option<&AddedToken> {
        self.added.iter().find(|a| a.string == string)
    }

    /// Encodes with the original tokenizer, ignoring added tokens.
    pub fn encode_base(&self, text: &[u8]) -> Vec<u32> {
        self.base.encode(text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ExtendedFile {
            vocab: self.base.to_file(),
            added: self
                .added
                .iter()
                .map(|a| AddedEntry {
                    string: hex::encode(&a.string),
                    id: a.id,
                    subtokens: a.subtokens.clone(),
                    duplicate: a.duplicate,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ExtendedFile = serde_json::from_str(json)?;
        let base = Vocab::from_file(file.vocab)?;
        let v = base.size() as u32;
        let mut added = Vec::with_capacity(file.added.len());
        for (k, e) in file.added.into_iter().enumerate() {
            let string =
                hex::decode(&e.string).map_err(|err| Error::Format(format!("bad hex: {err}")))?;
            if e.id != v + k as u32 {
                return Err(Error::Format(format!(
                    "added ids must be contiguous from {v}"
                )));
            }
            if base.decode(&e.subtokens)? != string {
                return Err(Error::Format(format!(
                    "subtokens of added token {} do not spell it",
                    e.id
                )));
            }
            added.push(AddedToken {
                string,
                id: e.id,
                subtokens: e.subtokens,
                duplicate: e.duplicate,
            });
        }
        Self::assemble(base, added)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Tokenizer for ExtendedVocab {
    fn encode(&self, text: &[u8]) -> Vec<u32> {
        let Some(matcher) = &self.matcher else {
            return self.base.encode(text);
        };
        let mut out = Vec::new();
        let mut pos = 0;
        for m in matcher.find_leftmost_longest(text) {
            self.base.encode_into(&text[pos..m.start], &mut out);
            out.push(self.added[m.pattern].id);
            pos = m.end;
        }
        self.base.encode_into(&text[pos..], &mut out);
        out
    }

    fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token_bytes(id).ok_or(Error::UnknownId {
                id,
                vocab_size: self.size(),
            })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        match self.added_index(id) {
            Some(k) => Some(&self.added[k].string),
            None => self.base.token_bytes(id),
        }
    }

    fn size(&self) -> usize {
        self.base.size() + self.added.len()
    }
}

#[derive(Serialize, Deserialize)]
struct AddedEntry {
    string: String,
    id: u32,
    subtokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    duplicate: bool,
}

#[derive(Serialize, Deserialize)]
struct ExtendedFile {
    #[serde(flatten)]
    vocab: VocabFile,
    added: Vec<AddedEntry>,
}
