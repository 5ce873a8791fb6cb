use std::collections::{BTreeMap, HashMap};

use super::vocab::{pretokenize, Vocab};
use crate::error::{Error, Result};

/// Greedy BPE training over whitespace-delimited chunks.
///
/// Each round merges the most frequent adjacent pair. Ties go to the pair
/// whose left token bytes sort first, then the right token bytes. Training
/// stops early if no pair is left to merge.
pub fn train_bpe<'a, I>(corpus: I, target_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut vocab = Vocab::bytes_only();
    let base = super::Tokenizer::size(&vocab);
    if target_size < base {
        return Err(Error::Config(format!(
            "target vocabulary size {target_size} is below the {base} byte and special tokens"
        )));
    }

    let mut word_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for doc in corpus {
        for chunk in pretokenize(doc) {
            *word_counts.entry(chunk.to_vec()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::DegenerateInput("empty training corpus".into()));
    }
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c))
        .collect();

    while super::Tokenizer::size(&vocab) < target_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (ids, count) in &words {
            for w in ids.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += count;
            }
        }
        let token = |id: u32| super::Tokenizer::token_bytes(&vocab, id).unwrap_or(&[]);
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb)
                .then_with(|| token(pb.0).cmp(token(pa.0)))
                .then_with(|| token(pb.1).cmp(token(pa.1)))
        });
        let Some(((left, right), _)) = best else {
            log::info!("corpus exhausted after {} merges", vocab.merges().len());
            break;
        };
        let new_id = vocab.push_merge(left, right);
        for (ids, _) in &mut words {
            if ids.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
    }
    Ok(vocab)
}
