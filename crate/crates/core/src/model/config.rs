use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    crate::numerics::DEFAULT_RMS_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub tied_embeddings: bool,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

impl ModelConfig {
    /// The desk-scale teacher used throughout the test suite.
    pub fn fixture() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_seq_len: 128,
            tied_embeddings: false,
            rope_base: default_rope_base(),
            norm_eps: default_norm_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(
                "rotary embedding needs an even head dim".into(),
            ));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("empty vocabulary or context".into()));
        }
        if self.norm_eps <= 0.0 {
            return Err(Error::Config("norm eps must be positive".into()));
        }
        Ok(())
    }
}
