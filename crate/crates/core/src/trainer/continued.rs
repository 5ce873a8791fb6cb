use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, AdamState, AdamWConfig, Schedule};
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, GradRequest, RowSelection, Upstream, Weights};
use crate::numerics::cross_entropy;
use crate::objectives::NewTokenTable;
use crate::tokenizer::{ExtendedVocab, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuedConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub warmup: usize,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for ContinuedConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            seq_len: 64,
            lr: 1e-3,
            warmup: 100,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuedOutcome {
    /// Model over the extended vocabulary.
    pub weights: Weights<f32>,
    pub losses: Vec<f64>,
}

/// Folds `table` into the model and continues next-token training on the
/// extended tokenization of `documents`. Only the embedding tables and the
/// first and last layers are updated.
pub fn continued_train(
    weights: &Weights<f32>,
    ext: &ExtendedVocab,
    table: &NewTokenTable,
    documents: &[String],
    cfg: &ContinuedConfig,
) -> Result<ContinuedOutcome> {
    let n_layers = weights.config.n_layers;
    if cfg.seq_len < 1 || cfg.seq_len > weights.config.max_seq_len || cfg.batch_size == 0 {
        return Err(Error::Config("invalid continued-training shape".into()));
    }
    let mut model = weights.with_added(&table.added())?;
    let bos = ext.base().bos();
    let stream: Vec<u32> = documents
        .iter()
        .flat_map(|d| std::iter::once(bos).chain(ext.encode(d.as_bytes())))
        .collect();
    let span = cfg.seq_len + 1;
    if stream.len() < span {
        return Err(Error::DegenerateInput(format!(
            "corpus has {} tokens, need at least {span}",
            stream.len()
        )));
    }
    let trainable = |name: &str| {
        name == "tok_emb"
            || name == "out_emb"
            || name.starts_with("layers.0.")
            || name.starts_with(&format!("layers.{}.", n_layers - 1))
    };
    let request = GradRequest {
        input_rows: RowSelection::All,
        output_rows: RowSelection::All,
        layers: [0, n_layers - 1].into_iter().collect(),
        final_norm: false,
    };
    let mut states: Vec<Option<AdamState>> = model
        .named_tensors()
        .iter()
        .map(|(n, t)| trainable(n).then(|| AdamState::new(t.len())))
        .collect();
    let schedule = Schedule::WarmupCosine {
        peak: cfg.lr,
        warmup: cfg.warmup,
        total: cfg.steps,
    };
    let opts = ForwardOptions::full(n_layers).with_cache();
    let mut rng = crate::seed::rng(cfg.seed, "continued/batches");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = model.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let start = rng.random_range(0..=stream.len() - span);
            let window = &stream[start..start + span];
            let trace = model.forward(&window[..cfg.seq_len], None, &opts)?;
            let ce = cross_entropy(
                trace.logits.as_ref().expect("logits requested"),
                &window[1..],
                &vec![false; cfg.seq_len],
            )?;
            batch_loss += ce.loss;
            let mut g = ce.grad;
            g.scale(1.0 / cfg.batch_size as f32);
            let upstream = Upstream {
                states: Vec::new(),
                logits: Some(g),
            };
            model
                .backward(&trace, None, &upstream, &request)?
                .accumulate_into(&mut grads)?;
        }
        let batch_loss = batch_loss / cfg.batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: "loss diverged".into(),
            });
        }
        losses.push(batch_loss);
        let lr = schedule.lr_at(step);
        for (((_, p), (_, g)), s) in model
            .named_tensors_mut()
            .into_iter()
            .zip(grads.named_tensors())
            .zip(states.iter_mut())
        {
            if let Some(s) = s {
                adamw_step(p.data_mut(), g.data(), s, lr, &cfg.adam)?;
            }
        }
        if step % 50 == 0 {
            log::info!("continued step {step}: loss {batch_loss:.4} lr {lr:.2e}");
        }
    }
    Ok(ContinuedOutcome {
        weights: model,
        losses,
    })
}
