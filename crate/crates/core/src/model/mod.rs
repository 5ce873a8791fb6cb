//! Pre-norm decoder-only transformer with rotary attention, GELU MLPs and
//! RMSNorm.
//!
//! The forward pass records every layer's residual stream and can stop at
//! any tap layer. The backward pass is hand-derived and only materialises
//! gradients for the parameters a caller asks for, which is how the
//! embedding trainers keep the original weights untouched.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod generate;
mod pretrain;
mod weights;

pub use backward::{GradBundle, GradRequest, RowGrads, RowSelection, Upstream};
pub use checkpoint::{
    load_checkpoint, read_container, save_checkpoint, write_container, Container,
};
pub use config::ModelConfig;
pub use forward::{ForwardOptions, ForwardTrace};
pub use generate::{argmax_lowest, generate, sample_next, DecodeMode, OutputMode};
pub use pretrain::{pretrain_fixture, PretrainConfig, PretrainReport};
pub use weights::{AddedEmbeddings, LayerWeights, Weights};
