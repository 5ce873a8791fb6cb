use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backward::{GradRequest, Upstream};
use super::config::ModelConfig;
use super::forward::ForwardOptions;
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::numerics::cross_entropy;
use crate::trainer::{adamw_step, AdamState, AdamWConfig, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub warmup: usize,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 8,
            seq_len: 64,
            lr: 3e-3,
            warmup: 100,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl PretrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Next-token training of every weight on windows drawn from a token stream
/// built by concatenating `documents`.
pub fn pretrain_fixture(
    config: &ModelConfig,
    documents: &[Vec<u32>],
    cfg: &PretrainConfig,
) -> Result<(Weights<f32>, PretrainReport)> {
    let mut weights = Weights::<f32>::init(config, crate::seed::derive(cfg.seed, "pretrain/init"))?;
    let stream: Vec<u32> = documents.iter().flatten().copied().collect();
    let span = cfg.seq_len + 1;
    if cfg.seq_len < 1 || cfg.seq_len > config.max_seq_len {
        return Err(Error::Config(format!(
            "seq_len {} out of range",
            cfg.seq_len
        )));
    }
    if stream.len() < span {
        return Err(Error::DegenerateInput(format!(
            "corpus has {} tokens, need at least {span}",
            stream.len()
        )));
    }
    let mut rng = crate::seed::rng(cfg.seed, "pretrain/batches");
    let schedule = Schedule::WarmupCosine {
        peak: cfg.lr,
        warmup: cfg.warmup,
        total: cfg.steps,
    };
    let mut states: Vec<AdamState> = weights
        .named_tensors()
        .iter()
        .map(|(_, t)| AdamState::new(t.len()))
        .collect();
    let request = GradRequest::all_weights(config.n_layers);
    let opts = ForwardOptions::full(config.n_layers)
        .with_cache()
        .with_logits();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grads = weights.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let start = rng.random_range(0..=stream.len() - span);
            let window = &stream[start..start + span];
            let trace = weights.forward(&window[..cfg.seq_len], None, &opts)?;
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
            weights
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
        for (((_, p), (_, g)), s) in weights
            .named_tensors_mut()
            .into_iter()
            .zip(grads.named_tensors())
            .zip(states.iter_mut())
        {
            adamw_step(p.data_mut(), g.data(), s, lr, &cfg.adam)?;
        }
        if step % 50 == 0 {
            log::info!("pretrain step {step}: loss {batch_loss:.4} lr {lr:.2e}");
        }
    }
    Ok((
        weights,
        PretrainReport {
            steps: cfg.steps,
            losses,
        },
    ))
}
