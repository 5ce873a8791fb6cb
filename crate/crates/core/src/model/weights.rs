use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<F> {
    pub attn_norm: Tensor<F>,
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub mlp_norm: Tensor<F>,
    pub w_up: Tensor<F>,
    pub w_down: Tensor<F>,
}

const LAYER_TENSORS: [&str; 8] = [
    "attn_norm",
    "wq",
    "wk",
    "wv",
    "wo",
    "mlp_norm",
    "w_up",
    "w_down",
];

impl<F: Real> LayerWeights<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let m = config.mlp_dim();
        Self {
            attn_norm: Tensor::zeros(&[d]),
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::zeros(&[d, d]),
            wo: Tensor::zeros(&[d, d]),
            mlp_norm: Tensor::zeros(&[d]),
            w_up: Tensor::zeros(&[d, m]),
            w_down: Tensor::zeros(&[m, d]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<F>); 8] {
        [
            ("attn_norm", &self.attn_norm),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("mlp_norm", &self.mlp_norm),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor<F>); 8] {
        [
            ("attn_norm", &mut self.attn_norm),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("mlp_norm", &mut self.mlp_norm),
            ("w_up", &mut self.w_up),
            ("w_down", &mut self.w_down),
        ]
    }

    pub fn cast<G: Real>(&self) -> LayerWeights<G> {
        LayerWeights {
            attn_norm: self.attn_norm.cast(),
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            mlp_norm: self.mlp_norm.cast(),
            w_up: self.w_up.cast(),
            w_down: self.w_down.cast(),
        }
    }
}

/// Model parameters. With tied embeddings there is no separate output
/// table: [`Weights::out_emb`] returns the input table itself, so writes to
/// either are visible through both.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub final_norm: Tensor<F>,
    out_emb: Option<Tensor<F>>,
}

/// Input (and optionally output) rows for ids `V..V+k` that are not part of
/// the pretrained tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AddedEmbeddings<F> {
    pub input: Tensor<F>,
    /// `None` leaves added ids out of the logits entirely. Ignored for tied
    /// models, where the input rows double as output rows.
    pub output: Option<Tensor<F>>,
}

impl<F: Real> AddedEmbeddings<F> {
    pub fn count(&self) -> usize {
        self.input.rows()
    }
}

impl<F: Real> Weights<F> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seed::rng(seed, "model-init");
        let d = config.d_model;
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let mut normal = |shape: &[usize], s: f64| -> Tensor<F> {
            let dist = Normal::new(0.0, s).expect("valid std");
            let n: usize = shape.iter().product();
            let v: Vec<F> = (0..n).map(|_| F::of(dist.sample(&mut rng))).collect();
            Tensor::new(shape.to_vec(), v).expect("shape")
        };
        let ones = |n: usize| Tensor::new(vec![n], vec![F::one(); n]).expect("shape");
        let tok_emb = normal(&[config.vocab_size, d], std);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                attn_norm: ones(d),
                wq: normal(&[d, d], std),
                wk: normal(&[d, d], std),
                wv: normal(&[d, d], std),
                wo: normal(&[d, d], resid_std),
                mlp_norm: ones(d),
                w_up: normal(&[d, config.mlp_dim()], std),
                w_down: normal(&[config.mlp_dim(), d], resid_std),
            });
        }
        let out_emb = (!config.tied_embeddings).then(|| normal(&[config.vocab_size, d], std));
        Ok(Self {
            config: config.clone(),
            tok_emb,
            layers,
            final_norm: ones(d),
            out_emb,
        })
    }

    /// All-zero transformer weights with unit norm gains, for hand-computed fixtures.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ones = |n: usize| Tensor::new(vec![n], vec![F::one(); n]).expect("shape");
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut l = LayerWeights::zeros(config);
                l.attn_norm = ones(d);
                l.mlp_norm = ones(d);
                l
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tok_emb: Tensor::zeros(&[config.vocab_size, d]),
            layers,
            final_norm: ones(d),
            out_emb: (!config.tied_embeddings).then(|| Tensor::zeros(&[config.vocab_size, d])),
        })
    }

    /// Every tensor zero, gains included. Used as a dense gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut w = self.clone();
        for (_, t) in w.named_tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = F::zero());
        }
        w
    }

    pub fn out_emb(&self) -> &Tensor<F> {
        self.out_emb.as_ref().unwrap_or(&self.tok_emb)
    }

    pub fn out_emb_mut(&mut self) -> &mut Tensor<F> {
        match self.out_emb.as_mut() {
            Some(t) => t,
            None => &mut self.tok_emb,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.out_emb.is_none()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn cast<G: Real>(&self) -> Weights<G> {
        Weights {
            config: self.config.clone(),
            tok_emb: self.tok_emb.cast(),
            layers: self.layers.iter().map(LayerWeights::cast).collect(),
            final_norm: self.final_norm.cast(),
            out_emb: self.out_emb.as_ref().map(Tensor::cast),
        }
    }

    /// Every parameter tensor under its checkpoint name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.tensors() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        if let Some(o) = &self.out_emb {
            out.push(("out_emb".to_string(), o));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = vec![("tok_emb".to_string(), &mut self.tok_emb)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in l.tensors_mut() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        if let Some(o) = &mut self.out_emb {
            out.push(("out_emb".to_string(), o));
        }
        out
    }

    pub fn from_named(config: ModelConfig, mut named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<F>> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let (v, d, m) = (config.vocab_size, config.d_model, config.mlp_dim());
        let tok_emb = take("tok_emb", &[v, d])?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut get = |n: &str, s: &[usize]| take(&format!("layers.{i}.{n}"), s);
            layers.push(LayerWeights {
                attn_norm: get(LAYER_TENSORS[0], &[d])?,
                wq: get(LAYER_TENSORS[1], &[d, d])?,
                wk: get(LAYER_TENSORS[2], &[d, d])?,
                wv: get(LAYER_TENSORS[3], &[d, d])?,
                wo: get(LAYER_TENSORS[4], &[d, d])?,
                mlp_norm: get(LAYER_TENSORS[5], &[d])?,
                w_up: get(LAYER_TENSORS[6], &[d, m])?,
                w_down: get(LAYER_TENSORS[7], &[m, d])?,
            });
        }
        let final_norm = take("final_norm", &[d])?;
        let out_emb = if config.tied_embeddings {
            None
        } else {
            Some(take("out_emb", &[v, d])?)
        };
        if let Some((name, _)) = named.first() {
            return Err(Error::Format(format!("unexpected tensor {name}")));
        }
        let w = Self {
            config,
            tok_emb,
            layers,
            final_norm,
            out_emb,
        };
        for (name, t) in w.named_tensors() {
            t.ensure_finite(&name)?;
        }
        Ok(w)
    }

    /// Folds added rows into the tables, producing a model over `V + k` ids.
    /// Missing output rows become zero vectors.
    pub fn with_added(&self, added: &AddedEmbeddings<F>) -> Result<Self> {
        let d = self.config.d_model;
        if added.input.cols() != d {
            return Err(Error::Shape("added rows have the wrong width".into()));
        }
        let k = added.count();
        let mut config = self.config.clone();
        config.vocab_size += k;
        let stack = |base: &Tensor<F>, extra: Option<&Tensor<F>>| -> Result<Tensor<F>> {
            let mut data = base.data().to_vec();
            match extra {
                Some(e) => data.extend_from_slice(e.data()),
                None => data.extend(std::iter::repeat_n(F::zero(), k * d)),
            }
            Tensor::matrix(config.vocab_size, d, data)
        };
        let tok_emb = stack(&self.tok_emb, Some(&added.input))?;
        let out_emb = match &self.out_emb {
            Some(o) => Some(stack(o, added.output.as_ref())?),
            None => None,
        };
        Ok(Self {
            config,
            tok_emb,
            layers: self.layers.clone(),
            final_norm: self.final_norm.clone(),
            out_emb,
        })
    }
}
