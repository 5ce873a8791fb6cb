use serde::{Deserialize, Serialize};

use super::data::Prepared;
use crate::error::Result;
use crate::model::{AddedEmbeddings, ForwardOptions, Weights};
use crate::numerics::Real;
use crate::objectives::{kl_loss, ntp_loss, td_loss};

/// Held-out quality of the current rows on one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetScore {
    pub target: String,
    /// Distillation loss at the tap layer; `None` without mapped positions.
    pub td: Option<f64>,
    /// Mean KL over mapped positions at the output, original vocabulary only.
    pub kl: Option<f64>,
    /// Next-token loss of the student sequence.
    pub ntp: f64,
}

/// Scores snippets with the teacher and a student using `added`.
/// `exclude_from` masks added output channels out of the next-token loss.
pub fn score_snippets<F: Real>(
    weights: &Weights<F>,
    added: &AddedEmbeddings<F>,
    prepared: &[Prepared],
    tap: usize,
    post_norm_tap: bool,
    exclude_from: Option<usize>,
) -> Result<Vec<SnippetScore>> {
    let n_layers = weights.config.n_layers;
    let v = weights.config.vocab_size;
    let mut opts = ForwardOptions::full(n_layers).with_logits();
    opts.post_norm_tap = post_norm_tap;
    prepared
        .iter()
        .map(|p| {
            let teacher = weights.forward(&p.teacher_ids, None, &opts)?;
            let student = weights.forward(&p.student_ids, Some(added), &opts)?;
            let (td, kl) = if p.map.is_empty() {
                (None, None)
            } else {
                let t = teacher.state(tap).expect("full pass");
                let s = student.state(tap).expect("full pass");
                let tl = teacher.logits.as_ref().expect("logits requested");
                let sl = student.logits.as_ref().expect("logits requested");
                (
                    Some(td_loss(t, s, &p.map)?.loss),
                    Some(kl_loss(tl, sl, &p.map, v)?.loss),
                )
            };
            let ntp = ntp_loss(
                student.logits.as_ref().expect("logits"),
                &p.student_ids,
                exclude_from,
            )?
            .loss;
            Ok(SnippetScore {
                target: p.target.clone(),
                td,
                kl,
                ntp,
            })
        })
        .collect()
}

/// Mean of the present values; `None` if there are none.
pub fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
