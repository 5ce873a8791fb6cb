use serde::{Deserialize, Serialize};

use crate::alignment::AlignOptions;
use crate::error::{Error, Result};
use crate::model::OutputMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Hidden-state distillation at the tap layer.
    #[default]
    Td,
    /// Distillation on the original-vocabulary logits.
    TdLogits,
    /// KL from the teacher's next-token distribution to the student's.
    TdKl,
    /// Next-token prediction updating only the added rows.
    NtpMasked,
    /// Next-token prediction updating both full embedding tables.
    NtpAll,
}

impl ObjectiveKind {
    pub fn is_distillation(self) -> bool {
        matches!(self, Self::Td | Self::TdLogits | Self::TdKl)
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown objective {s:?}")))
    }
}

/// How a masked next-token term is added to a distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    None,
    Sum,
    /// The next-token term is rescaled by a constant `loss_td / loss_ntp`.
    Autoscaled,
}

impl std::str::FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown combination {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub objective: ObjectiveKind,
    pub combine: Combine,
    /// `None` means the last layer.
    pub tap_layer: Option<usize>,
    pub output_mode: OutputMode,
    pub supervise_span_end: bool,
    /// Weight snippets by their number of mapped positions instead of
    /// averaging per-snippet means.
    pub flat_mean: bool,
    /// Next-token gradients reach only the added output rows.
    pub head_only: bool,
    /// Snippets of all targets share batches and every added token in a
    /// snippet is trained; otherwise only the snippet's own target is.
    pub joint: bool,
    /// Compare pre-final-norm states when tapping the last layer.
    pub pre_norm_tap: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Td,
            combine: Combine::None,
            tap_layer: None,
            output_mode: OutputMode::Zeros,
            supervise_span_end: false,
            flat_mean: false,
            head_only: false,
            joint: true,
            pre_norm_tap: false,
        }
    }
}

impl ObjectiveConfig {
    /// Resolved tap layer for a model with `n_layers` layers.
    pub fn tap(&self, n_layers: usize) -> Result<usize> {
        let l = self.tap_layer.unwrap_or(n_layers);
        if l == 0 || l > n_layers {
            return Err(Error::Config(format!(
                "tap layer {l} outside 1..={n_layers}"
            )));
        }
        if matches!(
            self.objective,
            ObjectiveKind::TdLogits | ObjectiveKind::TdKl
        ) && l != n_layers
        {
            return Err(Error::Config(
                "logit objectives compare the last layer".into(),
            ));
        }
        Ok(l)
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        self.tap(n_layers)?;
        if self.combine != Combine::None && !self.objective.is_distillation() {
            return Err(Error::Config(
                "combination adds a next-token term to a distillation objective".into(),
            ));
        }
        if self.head_only && self.output_mode != OutputMode::Learned {
            return Err(Error::Config(
                "head-only training needs learned output rows".into(),
            ));
        }
        Ok(())
    }

    /// Whether the student pass needs logits.
    pub fn needs_logits(&self) -> bool {
        !matches!(self.objective, ObjectiveKind::Td) || self.combine != Combine::None
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions {
            supervise_span_end: self.supervise_span_end,
        }
    }
}
