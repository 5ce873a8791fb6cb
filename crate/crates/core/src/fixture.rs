//! The desk-scale fixture: a seeded synthetic corpus over a compositional
//! lexicon, the tokenizer trained on it, and the small teacher model
//! pretrained on it.
//!
//! Nouns are glued together from a small syllable inventory, so most of them
//! split into several BPE pieces. Each noun has fixed attributes (colour,
//! habitat, kind, size) that the templates keep restating, which gives the
//! teacher something noun-specific to encode in its hidden states.

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    load_checkpoint, pretrain_fixture, ModelConfig, PretrainConfig, PretrainReport, Weights,
};
use crate::tokenizer::{train_bpe, Tokenizer, Vocab};

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ren", "tu", "sha", "vel", "dor", "pi", "zan", "fe", "gro", "bi", "nu",
    "sol", "tra", "mek", "wi", "ju", "plo",
];
const COLOURS: [&str; 8] = [
    "red", "blue", "green", "yellow", "white", "black", "purple", "orange",
];
const PLACES: [&str; 8] = [
    "river", "forest", "desert", "village", "mountain", "harbor", "garden", "cave",
];
const KINDS: [&str; 6] = ["animal", "tool", "fruit", "stone", "bird", "song"];
const SIZES: [&str; 3] = ["small", "large", "tiny"];

/// Where the shipped fixture files live.
pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A hand-built vocabulary in which `" palatable"` splits into
/// `[" pal", "at", "able"]`.
pub fn palatable_vocab() -> Vocab {
    Vocab::from_merge_strings(&[
        (b" ", b"p"),
        (b" p", b"a"),
        (b" pa", b"l"),
        (b"a", b"t"),
        (b"a", b"b"),
        (b"ab", b"l"),
        (b"abl", b"e"),
    ])
    .expect("static merges are valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Noun {
    pub word: String,
    pub colour: String,
    pub place: String,
    pub kind: String,
    pub size: String,
}

/// The fixed set of nouns the corpus talks about.
pub fn lexicon(seed: u64, count: usize) -> Vec<Noun> {
    let mut rng = crate::seed::rng(seed, "fixture/lexicon");
    let mut seen = std::collections::BTreeSet::new();
    let mut nouns = Vec::with_capacity(count);
    while nouns.len() < count {
        let n_syll = if rng.random_bool(0.3) { 2 } else { 3 };
        let word: String = (0..n_syll)
            .map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty"))
            .collect();
        if !seen.insert(word.clone()) {
            continue;
        }
        nouns.push(Noun {
            word,
            colour: COLOURS.choose(&mut rng).expect("non-empty").to_string(),
            place: PLACES.choose(&mut rng).expect("non-empty").to_string(),
            kind: KINDS.choose(&mut rng).expect("non-empty").to_string(),
            size: SIZES.choose(&mut rng).expect("non-empty").to_string(),
        });
    }
    nouns
}

fn sentence(n: &Noun, other: &Noun, template: usize) -> String {
    let w = &n.word;
    match template {
        0 => format!("The {w} is {}.", n.colour),
        1 => format!("A {w} lives near the {}.", n.place),
        2 => format!("Every {w} is a kind of {}.", n.kind),
        3 => format!(
            "The word {w} is defined as a {} {} {} from the {}.",
            n.size, n.colour, n.kind, n.place
        ),
        4 => format!("I saw a {w} in the {}, it was {}.", n.place, n.colour),
        5 => format!("The {w} is {} and {}.", n.size, n.colour),
        6 => format!(
            "Near the {} you can find the {w} and the {}.",
            n.place, other.word
        ),
        7 => format!("My {w} is a {} {}.", n.colour, n.kind),
        _ => format!("They say the {w} is not like the {}.", other.word),
    }
}

/// Seeded documents, one per line, each a handful of sentences.
pub fn synthetic_corpus(lexicon: &[Noun], seed: u64, n_docs: usize) -> Vec<String> {
    let mut rng = crate::seed::rng(seed, "fixture/corpus");
    (0..n_docs)
        .map(|_| {
            let topic = lexicon.choose(&mut rng).expect("non-empty lexicon");
            let n_sent = rng.random_range(3..=6);
            let sentences: Vec<String> = (0..n_sent)
                .map(|_| {
                    let noun = if rng.random_bool(0.6) {
                        topic
                    } else {
                        lexicon.choose(&mut rng).expect("non-empty lexicon")
                    };
                    let other = lexicon.choose(&mut rng).expect("non-empty lexicon");
                    sentence(noun, other, rng.random_range(0..9))
                })
                .collect();
            sentences.join(" ")
        })
        .collect()
}

/// Everything needed to rebuild the shipped fixture from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub lexicon_seed: u64,
    pub lexicon_size: usize,
    pub corpus_seed: u64,
    pub corpus_docs: usize,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            lexicon_seed: 17,
            lexicon_size: 200,
            corpus_seed: 17,
            corpus_docs: 4000,
            model: ModelConfig::fixture(),
            pretrain: PretrainConfig {
                steps: 2000,
                ..PretrainConfig::default()
            },
        }
    }
}

impl FixtureSpec {
    pub fn lexicon(&self) -> Vec<Noun> {
        lexicon(self.lexicon_seed, self.lexicon_size)
    }

    /// The pretraining corpus.
    pub fn corpus(&self) -> Vec<String> {
        synthetic_corpus(&self.lexicon(), self.corpus_seed, self.corpus_docs)
    }

    /// A second corpus over the same lexicon that the teacher never saw,
    /// used for snippet retrieval and evaluation text.
    pub fn fresh_corpus(&self, seed: u64, n_docs: usize) -> Vec<String> {
        synthetic_corpus(&self.lexicon(), seed, n_docs)
    }
}

pub struct Fixture {
    pub vocab: Vocab,
    pub weights: Weights<f32>,
    pub report: Option<PretrainReport>,
}

/// Trains the tokenizer and pretrains the teacher.
pub fn build_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    let corpus = spec.corpus();
    let vocab = train_bpe(corpus.iter().map(|d| d.as_bytes()), spec.model.vocab_size)?;
    let docs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|d| {
            let mut ids = vec![vocab.bos()];
            ids.extend(vocab.encode(d.as_bytes()));
            ids
        })
        .collect();
    let (weights, report) = pretrain_fixture(&spec.model, &docs, &spec.pretrain)?;
    Ok(Fixture {
        vocab,
        weights,
        report: Some(report),
    })
}

/// Loads the shipped tokenizer and teacher.
pub fn load_fixture() -> Result<Fixture> {
    let dir = fixture_dir();
    Ok(Fixture {
        vocab: Vocab::load(&dir.join("vocab.json"))?,
        weights: load_checkpoint(dir.join("model.ckpt"))?,
        report: None,
    })
}
