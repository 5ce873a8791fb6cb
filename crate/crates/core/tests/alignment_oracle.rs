//! Mapped positions against a quadratic byte-offset oracle.

mod common;

use rand::seq::IndexedRandom;
use rand::Rng;
use tokdistill::alignment::{align, AlignOptions, AlignmentMap};
use tokdistill::fixture::{lexicon, load_fixture};
use tokdistill::tokenizer::{word_initial, ExtendOptions, ExtendedVocab, Tokenizer};

fn starts(ids: &[u32], ext: &ExtendedVocab) -> Vec<(usize, usize)> {
    let mut at = 0;
    ids.iter()
        .map(|&id| {
            let len = ext.token_bytes(id).unwrap().len();
            at += len;
            (at - len, at)
        })
        .collect()
}

/// Pairs every non-added extended token after the first added token with the
/// original token at the same byte range and id; spans cover every original
/// token that overlaps the added token's bytes.
fn oracle(original: &[u32], extended: &[u32], ext: &ExtendedVocab, span_end: bool) -> AlignmentMap {
    let o = starts(original, ext);
    let e = starts(extended, ext);
    let mut map = AlignmentMap::default();
    for (i, &id) in extended.iter().enumerate() {
        if !ext.is_added(id) {
            continue;
        }
        let (lo, hi) = e[i];
        let covered: Vec<usize> = (0..original.len())
            .filter(|&j| o[j].0 < hi && o[j].1 > lo)
            .collect();
        map.spans.push(tokdistill::alignment::OccurrenceSpan {
            position: i,
            id,
            start: covered[0],
            end: covered[covered.len() - 1] + 1,
        });
    }
    let Some(first) = map.spans.first().map(|s| s.position) else {
        return map;
    };
    for i in first + 1..extended.len() {
        if ext.is_added(extended[i]) {
            continue;
        }
        for j in 0..original.len() {
            if o[j].0 == e[i].0 && original[j] == extended[i] {
                map.pairs.push((i, j));
            }
        }
    }
    if span_end {
        for s in &map.spans {
            map.pairs.push((s.position, s.end - 1));
        }
        map.pairs.sort_unstable();
    }
    map
}

#[test]
fn align_matches_brute_force_and_offset_law() {
    let fx = load_fixture().unwrap();
    let lex = lexicon(17, 200);
    let added: Vec<Vec<u8>> = lex
        .iter()
        .map(|n| word_initial(&n.word))
        .filter(|s| fx.vocab.encode(s).len() > 1)
        .take(8)
        .collect();
    let ext = ExtendedVocab::new(fx.vocab.clone(), &added, ExtendOptions::default()).unwrap();
    let fillers = [
        " the", " a", " is", " of", " river", " red", ".", " and", " small", " bird",
    ];
    let mut rng = common::rng(6);
    let (mut multi, mut cooccur, mut single) = (0, 0, 0);
    for case in 0..600 {
        let mut text = String::new();
        let n_words = rng.random_range(3..25);
        let n_added = match case % 4 {
            0 => 1,
            1 => 2,
            _ => rng.random_range(0..4),
        };
        let slots: Vec<usize> = (0..n_added).map(|_| rng.random_range(0..n_words)).collect();
        for w in 0..n_words {
            for _ in slots.iter().filter(|&&s| s == w) {
                let a = added.choose(&mut rng).unwrap();
                text.push_str(std::str::from_utf8(a).unwrap());
            }
            text.push_str(fillers.choose(&mut rng).unwrap());
        }
        let original = ext.encode_base(text.as_bytes());
        let extended = ext.encode(text.as_bytes());
        for span_end in [false, true] {
            let got = align(
                &original,
                &extended,
                &ext,
                AlignOptions {
                    supervise_span_end: span_end,
                },
            )
            .unwrap();
            assert_eq!(
                got,
                oracle(&original, &extended, &ext, span_end),
                "{text:?}"
            );
        }
        let map = align(&original, &extended, &ext, AlignOptions::default()).unwrap();
        let ids = map.added_ids();
        multi += usize::from(map.spans.len() > 1 && ids.len() < map.spans.len());
        cooccur += usize::from(ids.len() > 1);
        // The law applies when the original tokens of the span end exactly
        // where the added string ends.
        let clean = map.spans.len() == 1 && {
            let s = &map.spans[0];
            let o = starts(&original, &ext);
            o[s.end - 1].1 == starts(&extended, &ext)[s.position].1
        };
        if clean {
            single += 1;
            let s = &map.spans[0];
            let n = ext
                .added()
                .iter()
                .find(|a| a.id == s.id)
                .unwrap()
                .subtokens
                .len();
            assert_eq!(s.end - s.start, n);
            assert_eq!(s.start, s.position);
            for &(i, j) in &map.pairs {
                assert_eq!(j, i + (n - 1), "{text:?}");
            }
        }
    }
    assert!(
        multi > 20 && cooccur > 20 && single > 100,
        "{multi} {cooccur} {single}"
    );
}

#[test]
fn mismatched_sequences_are_rejected() {
    let fx = load_fixture().unwrap();
    let ext = ExtendedVocab::new(
        fx.vocab.clone(),
        &[b" lives".to_vec()],
        ExtendOptions {
            allow_duplicates: true,
        },
    )
    .unwrap();
    let a = ext.encode_base(b" the cat");
    let b = ext.encode_base(b" the dog");
    assert!(align(&a, &b, &ext, AlignOptions::default()).is_err());
    let with_added = ext.encode(b" lives here");
    assert!(align(&with_added, &with_added, &ext, AlignOptions::default()).is_err());
    let none = align(&a, &a, &ext, AlignOptions::default()).unwrap();
    assert!(none.is_empty() && none.spans.is_empty());
}
