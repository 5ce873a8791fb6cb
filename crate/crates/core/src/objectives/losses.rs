use crate::alignment::AlignmentMap;
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, Real, Tensor};

use super::config::Combine;

/// A scalar loss and its gradient with respect to the student tensor it was
/// computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<F> {
    pub loss: f64,
    pub grad: Tensor<F>,
}

fn check_pairs<F: Real>(
    teacher: &Tensor<F>,
    student: &Tensor<F>,
    map: &AlignmentMap,
) -> Result<()> {
    if map.is_empty() {
        return Err(Error::DegenerateInput("no mapped positions".into()));
    }
    for &(i, j) in &map.pairs {
        if i >= student.rows() || j >= teacher.rows() {
            return Err(Error::Shape(format!("pair ({i}, {j}) out of range")));
        }
    }
    Ok(())
}

/// Mean over mapped pairs of the squared distance between student and
/// teacher states. Teacher states are constants.
pub fn td_loss<F: Real>(
    teacher: &Tensor<F>,
    student: &Tensor<F>,
    map: &AlignmentMap,
) -> Result<LossGrad<F>> {
    check_pairs(teacher, student, map)?;
    if teacher.cols() != student.cols() {
        return Err(Error::Shape("state widths differ".into()));
    }
    let inv = 1.0 / map.len() as f64;
    let mut grad = Tensor::zeros(student.shape());
    let mut loss = 0.0;
    for &(i, j) in &map.pairs {
        let (s, t) = (student.row(i), teacher.row(j));
        let g = grad.row_mut(i);
        for c in 0..s.len() {
            let diff = s[c].as_f64() - t[c].as_f64();
            loss += diff * diff;
            g[c] += F::of(2.0 * diff * inv);
        }
    }
    Ok(LossGrad {
        loss: loss * inv,
        grad,
    })
}

/// Squared error over the first `base_vocab` logit channels only.
pub fn logit_mse_loss<F: Real>(
    teacher_logits: &Tensor<F>,
    student_logits: &Tensor<F>,
    map: &AlignmentMap,
    base_vocab: usize,
) -> Result<LossGrad<F>> {
    check_pairs(teacher_logits, student_logits, map)?;
    if teacher_logits.cols() < base_vocab || student_logits.cols() < base_vocab {
        return Err(Error::Shape(
            "logits narrower than the original vocabulary".into(),
        ));
    }
    let inv = 1.0 / map.len() as f64;
    let mut grad = Tensor::zeros(student_logits.shape());
    let mut loss = 0.0;
    for &(i, j) in &map.pairs {
        let (s, t) = (student_logits.row(i), teacher_logits.row(j));
        let g = grad.row_mut(i);
        for c in 0..base_vocab {
            let diff = s[c].as_f64() - t[c].as_f64();
            loss += diff * diff;
            g[c] += F::of(2.0 * diff * inv);
        }
    }
    Ok(LossGrad {
        loss: loss * inv,
        grad,
    })
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// `KL(teacher || student)` per pair over the original vocabulary, with the
/// student's added channels masked out before normalisation.
pub fn kl_loss<F: Real>(
    teacher_logits: &Tensor<F>,
    student_logits: &Tensor<F>,
    map: &AlignmentMap,
    base_vocab: usize,
) -> Result<LossGrad<F>> {
    check_pairs(teacher_logits, student_logits, map)?;
    if teacher_logits.cols() < base_vocab || student_logits.cols() < base_vocab {
        return Err(Error::Shape(
            "logits narrower than the original vocabulary".into(),
        ));
    }
    let inv = 1.0 / map.len() as f64;
    let mut grad = Tensor::zeros(student_logits.shape());
    let mut loss = 0.0;
    for &(i, j) in &map.pairs {
        let t: Vec<f64> = teacher_logits.row(j)[..base_vocab]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let s: Vec<f64> = student_logits.row(i)[..base_vocab]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let (lp, lq) = (log_softmax(&t), log_softmax(&s));
        let g = grad.row_mut(i);
        for c in 0..base_vocab {
            let p = lp[c].exp();
            if p > 0.0 {
                loss += p * (lp[c] - lq[c]);
            }
            g[c] += F::of((lq[c].exp() - p) * inv);
        }
    }
    Ok(LossGrad {
        loss: (loss * inv).max(0.0),
        grad,
    })
}

/// Next-token cross-entropy over a sequence. When `exclude_from` is set,
/// logit columns from that index on are treated as absent and positions
/// whose target lies there are skipped.
pub fn ntp_loss<F: Real>(
    logits: &Tensor<F>,
    ids: &[u32],
    exclude_from: Option<usize>,
) -> Result<LossGrad<F>> {
    if ids.len() < 2 {
        return Err(Error::DegenerateInput(
            "next-token loss needs two positions".into(),
        ));
    }
    if logits.rows() != ids.len() {
        return Err(Error::Shape("one logit row per position expected".into()));
    }
    let t = ids.len() - 1;
    let width = exclude_from.unwrap_or(logits.cols()).min(logits.cols());
    let mut rows = Vec::with_capacity(t * width);
    for r in 0..t {
        rows.extend_from_slice(&logits.row(r)[..width]);
    }
    let view = Tensor::matrix(t, width, rows)?;
    let targets = &ids[1..];
    let mask: Vec<bool> = targets.iter().map(|&id| id as usize >= width).collect();
    let safe: Vec<u32> = targets
        .iter()
        .map(|&id| if id as usize >= width { 0 } else { id })
        .collect();
    let ce = cross_entropy(&view, &safe, &mask)?;
    let mut grad = Tensor::zeros(logits.shape());
    for r in 0..t {
        grad.row_mut(r)[..width].copy_from_slice(ce.grad.row(r));
    }
    Ok(LossGrad {
        loss: ce.loss,
        grad,
    })
}

/// Value and term weights of a distillation loss plus a next-token loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub loss: f64,
    /// Weight on the next-token term, treated as a constant.
    pub alpha: f64,
}

pub fn combine(l_td: f64, l_ntp: f64, mode: Combine) -> Combined {
    match mode {
        Combine::None => Combined {
            loss: l_td,
            alpha: 0.0,
        },
        Combine::Sum => Combined {
            loss: l_td + l_ntp,
            alpha: 1.0,
        },
        Combine::Autoscaled => {
            let alpha = if l_ntp == 0.0 {
                log::warn!("next-token loss is zero; using alpha = 1");
                1.0
            } else {
                l_td / l_ntp
            };
            Combined {
                loss: l_td + alpha * l_ntp,
                alpha,
            }
        }
    }
}
