use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::ForwardOptions;
use super::weights::{AddedEmbeddings, Weights};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// How added ids take part in the output distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Added ids are never predicted.
    #[default]
    Exclude,
    /// Added output rows are zero vectors, so their logit is always 0.
    Zeros,
    /// Added output rows carry trained values.
    Learned,
}

impl std::str::FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(Self::Exclude),
            "zeros" => Ok(Self::Zeros),
            "learned" => Ok(Self::Learned),
            other => Err(Error::Config(format!("unknown output mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    /// A temperature of zero falls back to greedy decoding.
    Temperature {
        temperature: f64,
        seed: u64,
    },
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest<F: Real>(row: &[F]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Draws one id from `softmax(row / temperature)`.
pub fn sample_next<F: Real>(row: &[F], temperature: f64, rng: &mut ChaCha8Rng) -> u32 {
    if temperature <= 0.0 {
        return argmax_lowest(row);
    }
    let max = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row
        .iter()
        .map(|v| ((v.as_f64() - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    argmax_lowest(row)
}

impl<F: Real> Weights<F> {
    /// Logits for the last position of `ids` under an output mode.
    pub fn next_logits(
        &self,
        ids: &[u32],
        added: Option<&AddedEmbeddings<F>>,
        mode: OutputMode,
    ) -> Result<Vec<F>> {
        let trace = self.forward(ids, added, &ForwardOptions::full(self.config.n_layers))?;
        let hn = trace.final_hidden.as_ref().expect("full forward");
        let last = Tensor::matrix(1, hn.cols(), hn.row(hn.rows() - 1).to_vec())?;
        let mut logits = self.project_logits(&last, None)?.into_data();
        if let Some(a) = added {
            match mode {
                OutputMode::Exclude => {}
                OutputMode::Zeros => logits.extend(std::iter::repeat_n(F::zero(), a.count())),
                OutputMode::Learned => {
                    let rows = self
                        .output_rows(Some(a))
                        .ok_or_else(|| Error::Config("learned mode needs output rows".into()))?;
                    for r in 0..rows.rows() {
                        let dot = rows
                            .row(r)
                            .iter()
                            .zip(last.row(0))
                            .fold(F::zero(), |acc, (&x, &y)| acc + x * y);
                        logits.push(dot);
                    }
                }
            }
        }
        Ok(logits)
    }
}

/// Autoregressive decoding. Once the sequence outgrows the context window
/// only the most recent positions are fed back in.
pub fn generate<F: Real>(
    weights: &Weights<F>,
    added: Option<&AddedEmbeddings<F>>,
    prompt: &[u32],
    max_new: usize,
    mode: DecodeMode,
    output: OutputMode,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::DegenerateInput("empty prompt".into()));
    }
    let mut ids = prompt.to_vec();
    let mut rng = match mode {
        DecodeMode::Temperature { seed, .. } => Some(crate::seed::rng(seed, "generate")),
        DecodeMode::Greedy => None,
    };
    let window = weights.config.max_seq_len;
    for _ in 0..max_new {
        let ctx = &ids[ids.len().saturating_sub(window)..];
        let logits = weights.next_logits(ctx, added, output)?;
        let next = match (mode, rng.as_mut()) {
            (DecodeMode::Temperature { temperature, .. }, Some(r)) => {
                sample_next(&logits, temperature, r)
            }
            _ => argmax_lowest(&logits),
        };
        ids.push(next);
    }
    Ok(ids)
}
