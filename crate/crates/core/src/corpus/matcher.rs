//! Aho-Corasick automaton over bytes.
//!
//! The trie is compiled into a dense transition table (256 entries per
//! state), so a scan is one table lookup per input byte plus the reported
//! matches.

use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub pattern: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Matcher {
    delta: Vec<u32>,
    outputs: Vec<Vec<u32>>,
    lengths: Vec<usize>,
}

impl Matcher {
    pub fn new<P: AsRef<[u8]>>(patterns: &[P]) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Pattern("no patterns".into()));
        }
        let mut seen = HashSet::new();
        let mut trie: Vec<BTreeMap<u8, u32>> = vec![BTreeMap::new()];
        let mut outputs: Vec<Vec<u32>> = vec![Vec::new()];
        for (pid, p) in patterns.iter().enumerate() {
            let p = p.as_ref();
            if p.is_empty() {
                return Err(Error::Pattern(format!("pattern {pid} is empty")));
            }
            if !seen.insert(p) {
                return Err(Error::Pattern(format!(
                    "pattern {:?} given twice",
                    String::from_utf8_lossy(p)
                )));
            }
            let mut s = 0usize;
            for &b in p {
                s = match trie[s].get(&b) {
                    Some(&t) => t as usize,
                    None => {
                        trie.push(BTreeMap::new());
                        outputs.push(Vec::new());
                        let t = trie.len() - 1;
                        trie[s].insert(b, t as u32);
                        t
                    }
                };
            }
            outputs[s].push(pid as u32);
        }

        let n = trie.len();
        let mut delta = vec![0u32; n * 256];
        let mut fail = vec![0u32; n];
        let mut queue = VecDeque::new();
        for (&b, &t) in &trie[0] {
            delta[b as usize] = t;
            queue.push_back(t as usize);
        }
        while let Some(s) = queue.pop_front() {
            let f = fail[s] as usize;
            for b in 0..256usize {
                match trie[s].get(&(b as u8)) {
                    Some(&t) => {
                        let t = t as usize;
                        fail[t] = delta[f * 256 + b];
                        let inherited = outputs[fail[t] as usize].clone();
                        outputs[t].extend(inherited);
                        delta[s * 256 + b] = t as u32;
                        queue.push_back(t);
                    }
                    None => delta[s * 256 + b] = delta[f * 256 + b],
                }
            }
        }
        Ok(Self {
            delta,
            outputs,
            lengths: patterns.iter().map(|p| p.as_ref().len()).collect(),
        })
    }

    pub fn pattern_count(&self) -> usize {
        self.lengths.len()
    }

    /// Every occurrence of every pattern, overlaps included, ordered by end
    /// offset and then by decreasing length.
    pub fn find_overlapping(&self, text: &[u8]) -> Vec<Match> {
        let mut out = Vec::new();
        let mut s = 0usize;
        for (i, &b) in text.iter().enumerate() {
            s = self.delta[s * 256 + b as usize] as usize;
            for &p in &self.outputs[s] {
                let p = p as usize;
                out.push(Match {
                    pattern: p,
                    start: i + 1 - self.lengths[p],
                    end: i + 1,
                });
            }
        }
        out
    }

    /// Non-overlapping matches chosen leftmost-longest; equal spans resolve
    /// to the lower pattern index.
    pub fn find_leftmost_longest(&self, text: &[u8]) -> Vec<Match> {
        let mut all = self.find_overlapping(text);
        all.sort_by(|a, b| {
            a.start
                .cmp(&b.start)
                .then(b.end.cmp(&a.end))
                .then(a.pattern.cmp(&b.pattern))
        });
        let mut chosen = Vec::new();
        let mut pos = 0;
        for m in all {
            if m.start >= pos {
                pos = m.end;
                chosen.push(m);
            }
        }
        chosen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Match>) -> Vec<(usize, usize)> {
        v.sort();
        v.into_iter().map(|m| (m.pattern, m.start)).collect()
    }

    #[test]
    fn ushers() {
        let m = Matcher::new(&["he", "she", "his", "hers"]).unwrap();
        let got = sorted(m.find_overlapping(b"ushers"));
        assert_eq!(got, vec![(0, 2), (1, 1), (3, 2)]);
    }

    #[test]
    fn overlapping_single_pattern() {
        let m = Matcher::new(&["aa"]).unwrap();
        let got: Vec<usize> = m.find_overlapping(b"aaa").iter().map(|x| x.start).collect();
        assert_eq!(got, vec![0, 1]);
        assert!(m.find_overlapping(b"bbb").is_empty());
    }

    #[test]
    fn bad_patterns() {
        assert!(Matcher::new::<&str>(&[]).is_err());
        assert!(Matcher::new(&["a", ""]).is_err());
        assert!(Matcher::new(&["a", "a"]).is_err());
    }

    #[test]
    fn leftmost_longest() {
        let m = Matcher::new(&["ab", "abcd", "bc", "cde"]).unwrap();
        let got: Vec<(usize, usize)> = m
            .find_leftmost_longest(b"xabcde")
            .iter()
            .map(|x| (x.pattern, x.start))
            .collect();
        assert_eq!(got, vec![(1, 1)]);
    }
}
