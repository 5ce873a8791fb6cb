use serde::{Deserialize, Serialize};

use super::data::prepare_all;
use super::embeddings::{train_embeddings_cached, TeacherCache, TrainConfig, TrainOutcome};
use super::evaluate::{mean_present, score_snippets};
use crate::corpus::SnippetSet;
use crate::error::{Error, Result};
use crate::model::{OutputMode, Weights};
use crate::numerics::Real;
use crate::objectives::NewTokenTable;
use crate::tokenizer::ExtendedVocab;

/// Held-out result of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lr: f64,
    /// Held-out distillation loss for distillation objectives, held-out
    /// next-token loss otherwise.
    pub heldout: f64,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_lr: f64,
    pub points: Vec<SweepPoint>,
    /// The run at `best_lr`.
    pub best: TrainOutcome,
}

/// Held-out metric the sweep selects on.
pub fn heldout_metric<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    heldout: &SnippetSet,
    table: &NewTokenTable,
    cfg: &TrainConfig,
) -> Result<f64> {
    let obj = &cfg.objective;
    let prepared = prepare_all(heldout, ext, obj.align_options())?;
    let v = weights.config.vocab_size;
    let exclude_from =
        (table.output_mode == OutputMode::Exclude && !weights.is_tied()).then_some(v);
    let scores = score_snippets(
        weights,
        &table.added(),
        &prepared,
        obj.tap(weights.config.n_layers)?,
        !obj.pre_norm_tap,
        exclude_from,
    )?;
    let metric = if obj.objective.is_distillation() {
        mean_present(scores.iter().map(|s| s.td))
    } else {
        mean_present(scores.iter().map(|s| Some(s.ntp)))
    };
    metric.ok_or_else(|| Error::Input("no held-out snippet has mapped positions".into()))
}

/// Trains once per learning rate on all but `heldout_per_target` snippets
/// of each target and keeps the rate with the lowest held-out metric.
/// Ties go to the smaller rate. Targets with a single snippet contribute
/// nothing to the held-out split; if no held-out snippets remain, the
/// training set is scored instead.
pub fn lr_sweep<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    snippets: &SnippetSet,
    start: &NewTokenTable,
    cfg: &TrainConfig,
    grid: &[f64],
    heldout_per_target: usize,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty learning-rate grid".into()));
    }
    let (train, held) = snippets.split(heldout_per_target);
    let eval_set = if held.is_empty() {
        log::warn!("no held-out snippets; selecting on the training set");
        &train
    } else {
        &held
    };
    let mut lrs = grid.to_vec();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut cache = TeacherCache::default();
    let mut points = Vec::with_capacity(lrs.len());
    let mut best: Option<(f64, f64, TrainOutcome)> = None;
    for lr in lrs {
        let run_cfg = TrainConfig { lr, ..cfg.clone() };
        let outcome = train_embeddings_cached(weights, ext, &train, start, &run_cfg, &mut cache)?;
        let heldout = heldout_metric(weights, ext, eval_set, &outcome.table, &run_cfg)?;
        log::info!("sweep lr {lr:.3e}: held-out {heldout:.6}");
        points.push(SweepPoint {
            lr,
            heldout,
            final_train_loss: outcome.log.last().map(|e| e.loss),
        });
        if best.as_ref().is_none_or(|(b, _, _)| heldout < *b) {
            best = Some((heldout, lr, outcome));
        }
    }
    let (_, best_lr, best) = best.expect("grid is non-empty");
    Ok(SweepResult {
        best_lr,
        points,
        best,
    })
}
