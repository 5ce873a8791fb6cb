//! New-token tables, their initialisers, and every training objective.

mod config;
mod losses;
mod table;

pub use config::{Combine, ObjectiveConfig, ObjectiveKind};
pub use losses::{combine, kl_loss, logit_mse_loss, ntp_loss, td_loss, Combined, LossGrad};
pub use table::{
    init_random, init_subtoken_mean, InitMethod, NewTokenTable, Provenance, TokenInfo,
};
