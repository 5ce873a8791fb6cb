use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnippetSource {
    Retrieved,
    Generated,
}

/// A short text containing one occurrence of `target` at byte range `span`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub target: String,
    pub text: String,
    pub span: [usize; 2],
    pub provenance: SnippetSource,
    pub doc_id: Option<usize>,
}

impl Snippet {
    pub fn validate(&self) -> Result<()> {
        let [s, e] = self.span;
        match self.text.as_bytes().get(s..e) {
            Some(b) if b == self.target.as_bytes() => Ok(()),
            _ => Err(Error::Input(format!(
                "snippet span {s}..{e} does not hold {:?}",
                self.target
            ))),
        }
    }
}

/// Snippets grouped by target, in target order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnippetSet {
    pub by_target: BTreeMap<String, Vec<Snippet>>,
}

impl SnippetSet {
    pub fn from_snippets(snippets: impl IntoIterator<Item = Snippet>) -> Self {
        let mut set = Self::default();
        for s in snippets {
            set.by_target.entry(s.target.clone()).or_default().push(s);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.by_target.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, target: &str) -> &[Snippet] {
        self.by_target.get(target).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snippet> {
        self.by_target.values().flatten()
    }

    /// Keeps at most `cap` snippets per target.
    pub fn truncate(&mut self, cap: usize) {
        self.by_target.values_mut().for_each(|v| v.truncate(cap));
    }

    /// Moves the last `heldout` snippets of every target into a second set.
    /// Targets with too few snippets keep at least one for training.
    pub fn split(&self, heldout: usize) -> (SnippetSet, SnippetSet) {
        let mut train = SnippetSet::default();
        let mut held = SnippetSet::default();
        for (t, v) in &self.by_target {
            let keep = v.len().saturating_sub(heldout).max(1).min(v.len());
            train.by_target.insert(t.clone(), v[..keep].to_vec());
            if keep < v.len() {
                held.by_target.insert(t.clone(), v[keep..].to_vec());
            }
        }
        (train, held)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in self.iter() {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut out = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Snippet = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("snippet line {}: {e}", n + 1)))?;
            s.validate()?;
            out.push(s);
        }
        Ok(Self::from_snippets(out))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Reads a corpus: JSONL with a `text` field per line, or plain text with
/// one document per line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)?;
    parse_corpus(&raw)
}

pub fn parse_corpus(raw: &str) -> Result<Vec<String>> {
    let first = raw.lines().find(|l| !l.trim().is_empty());
    let is_jsonl = first.is_some_and(|l| {
        serde_json::from_str::<serde_json::Value>(l).is_ok_and(|v| v.get("text").is_some())
    });
    if !is_jsonl {
        return Ok(raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect());
    }
    #[derive(Deserialize)]
    struct Line {
        text: String,
    }
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<Line>(l)
                .map(|x| x.text)
                .map_err(|e| Error::Format(format!("corpus line {}: {e}", n + 1)))
        })
        .collect()
}
