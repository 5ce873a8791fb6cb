use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    read_container, write_container, AddedEmbeddings, Container, OutputMode, Weights,
};
use crate::numerics::{Real, Tensor};
use crate::tokenizer::ExtendedVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Random,
    #[default]
    Mean,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown init method {other:?}"))),
        }
    }
}

/// Where a row's current value came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub init: String,
    pub trained_with: Option<String>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInfo {
    #[serde(with = "hex_bytes")]
    pub string: Vec<u8>,
    pub id: u32,
    pub subtokens: Vec<u32>,
    pub provenance: Provenance,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Learned rows for every added token.
#[derive(Debug, Clone, PartialEq)]
pub struct NewTokenTable {
    pub base_vocab_size: usize,
    pub tokens: Vec<TokenInfo>,
    /// `k x d` input rows, in added-id order.
    pub input: Tensor<f32>,
    /// `k x d` output rows, present only in learned mode.
    pub output: Option<Tensor<f32>>,
    pub output_mode: OutputMode,
    pub max_norm: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableMeta {
    kind: String,
    base_vocab_size: usize,
    output_mode: OutputMode,
    max_norm: Option<f64>,
    tokens: Vec<TokenInfo>,
}

/// Population mean and standard deviation of each column.
fn column_stats<F: Real>(table: &Tensor<F>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (table.rows(), table.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(table.row(r)) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(table.row(r)).zip(&mean) {
            let x = v.as_f64() - m;
            *s += x * x;
        }
    }
    (
        mean,
        var.into_iter().map(|s| (s / n as f64).sqrt()).collect(),
    )
}

fn sample_like<F: Real>(
    table: &Tensor<F>,
    count: usize,
    seed: u64,
    stream: &str,
) -> Result<Tensor<F>> {
    if table.rows() < 2 {
        return Err(Error::DegenerateInput(
            "need at least two rows for statistics".into(),
        ));
    }
    let (mean, std) = column_stats(table);
    let mut rng = crate::seed::rng(seed, stream);
    let d = table.cols();
    let mut data = Vec::with_capacity(count * d);
    for _ in 0..count {
        for c in 0..d {
            let v = if std[c] > 0.0 {
                Normal::new(mean[c], std[c])
                    .map_err(|e| Error::Numeric(e.to_string()))?
                    .sample(&mut rng)
            } else {
                mean[c]
            };
            data.push(F::of(v));
        }
    }
    Tensor::matrix(count, d, data)
}

/// Rows drawn per channel from a normal with the input table's column mean
/// and standard deviation.
pub fn init_random<F: Real>(weights: &Weights<F>, count: usize, seed: u64) -> Result<Tensor<F>> {
    sample_like(&weights.tok_emb, count, seed, "init/random")
}

fn mean_rows<F: Real>(table: &Tensor<F>, ids: &[u32]) -> Result<Vec<F>> {
    if ids.is_empty() {
        return Err(Error::DegenerateInput("no subtokens to average".into()));
    }
    let mut acc = vec![0.0f64; table.cols()];
    for &id in ids {
        if id as usize >= table.rows() {
            return Err(Error::UnknownId {
                id,
                vocab_size: table.rows(),
            });
        }
        for (a, v) in acc.iter_mut().zip(table.row(id as usize)) {
            *a += v.as_f64();
        }
    }
    Ok(acc
        .into_iter()
        .map(|a| F::of(a / ids.len() as f64))
        .collect())
}

/// Arithmetic mean of the input rows of `subtokens`.
pub fn init_subtoken_mean<F: Real>(weights: &Weights<F>, subtokens: &[u32]) -> Result<Vec<F>> {
    mean_rows(&weights.tok_emb, subtokens)
}

impl NewTokenTable {
    /// A table for every added token in `ext`, initialised with `method`.
    /// Learned output rows use the same method on the output table.
    pub fn initialize<F: Real>(
        weights: &Weights<F>,
        ext: &ExtendedVocab,
        method: InitMethod,
        output_mode: OutputMode,
        seed: u64,
    ) -> Result<Self> {
        if ext.base_size() != weights.vocab_size() {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, model has {}",
                ext.base_size(),
                weights.vocab_size()
            )));
        }
        let k = ext.added().len();
        let d = weights.config.d_model;
        let learned = output_mode == OutputMode::Learned && !weights.is_tied();
        let (input, output) = match method {
            InitMethod::Random => (
                init_random(weights, k, seed)?,
                learned
                    .then(|| sample_like(weights.out_emb(), k, seed, "init/random-out"))
                    .transpose()?,
            ),
            InitMethod::Mean => {
                let mut input = Vec::with_capacity(k * d);
                let mut output = Vec::with_capacity(k * d);
                for a in ext.added() {
                    input.extend(mean_rows(&weights.tok_emb, &a.subtokens)?);
                    if learned {
                        output.extend(mean_rows(weights.out_emb(), &a.subtokens)?);
                    }
                }
                (
                    Tensor::matrix(k, d, input)?,
                    learned.then(|| Tensor::matrix(k, d, output)).transpose()?,
                )
            }
        };
        let init = match method {
            InitMethod::Random => "random",
            InitMethod::Mean => "mean",
        };
        let tokens = ext
            .added()
            .iter()
            .map(|a| TokenInfo {
                string: a.string.clone(),
                id: a.id,
                subtokens: a.subtokens.clone(),
                provenance: Provenance {
                    init: init.into(),
                    trained_with: None,
                    steps: 0,
                },
            })
            .collect();
        Ok(Self {
            base_vocab_size: ext.base_size(),
            tokens,
            input: input.cast(),
            output: output.map(|o| o.cast()),
            output_mode,
            max_norm: None,
        })
    }

    pub fn count(&self) -> usize {
        self.tokens.len()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        (id as usize)
            .checked_sub(self.base_vocab_size)
            .filter(|&i| i < self.count())
    }

    pub fn find(&self, string: &[u8]) -> Option<&TokenInfo> {
        self.tokens.iter().find(|t| t.string == string)
    }

    /// Rows as the model consumes them, in precision `F`.
    pub fn added<F: Real>(&self) -> AddedEmbeddings<F> {
        let output = match self.output_mode {
            OutputMode::Exclude => None,
            OutputMode::Zeros => Some(Tensor::zeros(self.input.shape())),
            OutputMode::Learned => Some(
                self.output
                    .as_ref()
                    .map_or_else(|| Tensor::zeros(self.input.shape()), Tensor::cast),
            ),
        };
        AddedEmbeddings {
            input: self.input.cast(),
            output,
        }
    }

    /// Rescales any input row whose norm exceeds the clamp.
    pub fn apply_clamp(&mut self) {
        let Some(limit) = self.max_norm else { return };
        for r in 0..self.input.rows() {
            let row = self.input.row_mut(r);
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            if norm > limit {
                let s = (limit / norm) as f32;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = TableMeta {
            kind: "new_token_table".into(),
            base_vocab_size: self.base_vocab_size,
            output_mode: self.output_mode,
            max_norm: self.max_norm,
            tokens: self.tokens.clone(),
        };
        let mut tensors = vec![("added.in_emb".to_string(), self.input.clone())];
        if let Some(o) = &self.output {
            tensors.push(("added.out_emb".to_string(), o.clone()));
        }
        Ok(Container {
            config: serde_json::to_value(meta)?,
            tensors,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: TableMeta = serde_json::from_value(c.config)
            .map_err(|e| Error::Format(format!("table metadata: {e}")))?;
        let mut input = None;
        let mut output = None;
        for (name, t) in c.tensors {
            match name.as_str() {
                "added.in_emb" => input = Some(t),
                "added.out_emb" => output = Some(t),
                other => return Err(Error::Format(format!("unexpected tensor {other}"))),
            }
        }
        let input = input.ok_or_else(|| Error::Format("missing added.in_emb".into()))?;
        if input.rows() != meta.tokens.len() {
            return Err(Error::Format("row count differs from token list".into()));
        }
        if output.as_ref().is_some_and(|o| o.shape() != input.shape()) {
            return Err(Error::Format("output rows have the wrong shape".into()));
        }
        Ok(Self {
            base_vocab_size: meta.base_vocab_size,
            tokens: meta.tokens,
            input,
            output,
            output_mode: meta.output_mode,
            max_norm: meta.max_norm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path, &self.to_container()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(read_container(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 4,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 8,
            tied_embeddings: false,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
        }
    }

    #[test]
    fn mean_of_two_rows() {
        let mut w = Weights::<f64>::zeros(&cfg()).unwrap();
        w.tok_emb.row_mut(1).copy_from_slice(&[1.0, 3.0, 0.0, 0.0]);
        w.tok_emb.row_mut(2).copy_from_slice(&[3.0, 5.0, 0.0, 0.0]);
        assert_eq!(
            init_subtoken_mean(&w, &[1, 2]).unwrap(),
            vec![2.0, 4.0, 0.0, 0.0]
        );
        assert_eq!(
            init_subtoken_mean(&w, &[2]).unwrap(),
            w.tok_emb.row(2).to_vec()
        );
    }

    #[test]
    fn constant_columns_give_constant_rows() {
        let mut w = Weights::<f64>::zeros(&cfg()).unwrap();
        for r in 0..10 {
            w.tok_emb.row_mut(r).copy_from_slice(&[1.0, -2.0, 0.5, 7.0]);
        }
        let rows = init_random(&w, 3, 1).unwrap();
        for r in 0..3 {
            assert_eq!(rows.row(r), &[1.0, -2.0, 0.5, 7.0]);
        }
    }

    #[test]
    fn random_is_seeded() {
        let w = Weights::<f32>::init(&cfg(), 2).unwrap();
        assert_eq!(
            init_random(&w, 5, 3).unwrap(),
            init_random(&w, 5, 3).unwrap()
        );
        assert_ne!(
            init_random(&w, 5, 3).unwrap(),
            init_random(&w, 5, 4).unwrap()
        );
    }
}
