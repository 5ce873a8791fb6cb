use serde::{Deserialize, Serialize};

use super::snippet::{Snippet, SnippetSource};
use crate::error::{Error, Result};
use crate::model::{generate, DecodeMode, OutputMode, Weights};
use crate::numerics::Real;
use crate::tokenizer::{ExtendedVocab, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub n: usize,
    pub length_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n: 25,
            length_tokens: 50,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// The text a generation prompt starts with: the target preceded by a
/// space unless it already begins with whitespace.
pub fn generation_prompt(target: &str) -> String {
    if target.starts_with(char::is_whitespace) {
        target.to_string()
    } else {
        format!(" {target}")
    }
}

/// Samples `n` continuations of `[BOS] + target` from the original model.
/// Continuations stop early at a special token.
pub fn generate_snippets<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    target: &str,
    opts: GenerateOptions,
) -> Result<Vec<Snippet>> {
    if ext.find(target.as_bytes()).is_none() {
        return Err(Error::Config(format!("{target:?} is not an added token")));
    }
    let base = ext.base();
    let prompt_text = generation_prompt(target);
    let offset = prompt_text.len() - target.len();
    let mut prompt = vec![base.bos()];
    prompt.extend(base.encode(prompt_text.as_bytes()));
    let cap = prompt.len() - 1 + opts.length_tokens;

    let mut out = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let mode = if opts.temperature > 0.0 {
            DecodeMode::Temperature {
                temperature: opts.temperature,
                seed: crate::seed::derive(opts.seed, &format!("generate/{target}/{i}")),
            }
        } else {
            DecodeMode::Greedy
        };
        let ids = generate(
            weights,
            None,
            &prompt,
            opts.length_tokens,
            mode,
            OutputMode::Exclude,
        )?;
        let body: Vec<u32> = ids[1..]
            .iter()
            .copied()
            .take_while(|&id| !base.is_special(id))
            .collect();
        let mut bytes = base.decode(&body)?;
        // the model may emit non-canonical pieces; keep the canonical
        // re-encoding within the cap
        while base.encode(&bytes).len() > cap {
            bytes.pop();
        }
        let mut text = String::from_utf8_lossy(&bytes).into_owned();
        while base.encode(text.as_bytes()).len() > cap {
            text.pop();
        }
        out.push(Snippet {
            target: target.to_string(),
            text,
            span: [offset, offset + target.len()],
            provenance: SnippetSource::Generated,
            doc_id: None,
        });
    }
    Ok(out)
}
