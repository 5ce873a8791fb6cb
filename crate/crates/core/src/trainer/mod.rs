//! Training of added embedding rows, learning-rate sweeps and the
//! continued-training baseline.

mod continued;
mod data;
mod embeddings;
mod evaluate;
mod optim;
mod sweep;

pub use continued::{continued_train, ContinuedConfig, ContinuedOutcome};
pub use data::{prepare_all, prepare_snippet, Prepared};
pub use embeddings::{
    teacher_targets, train_embeddings, train_embeddings_cached, write_log, LogEntry, TeacherCache,
    TeacherTargets, TrainConfig, TrainOutcome,
};
pub use evaluate::{mean_present, score_snippets, SnippetScore};
pub use optim::{adamw_step, AdamState, AdamWConfig, Schedule};
pub use sweep::{lr_sweep, SweepPoint, SweepResult};
