use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{prepare_all, Prepared};
use super::optim::{adamw_step, AdamState, AdamWConfig, Schedule};
use crate::corpus::SnippetSet;
use crate::error::{Error, Result};
use crate::model::{
    AddedEmbeddings, ForwardOptions, ForwardTrace, GradBundle, GradRequest, OutputMode,
    RowSelection, Upstream, Weights,
};
use crate::numerics::{Real, Tensor};
use crate::objectives::{
    combine, kl_loss, logit_mse_loss, ntp_loss, td_loss, Combine, NewTokenTable, ObjectiveConfig,
    ObjectiveKind,
};
use crate::tokenizer::ExtendedVocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of all steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub adam: AdamWConfig,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub snippets_per_target: usize,
    pub window_tokens: usize,
    pub max_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            batch_size: 16,
            epochs: 1,
            warmup_fraction: 0.5,
            adam: AdamWConfig::default(),
            seed: 0,
            objective: ObjectiveConfig::default(),
            snippets_per_target: 25,
            window_tokens: 50,
            max_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.objective.validate(n_layers)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_td: Option<f64>,
    pub loss_ntp: Option<f64>,
    pub alpha: Option<f64>,
    pub grad_norm: f64,
}

pub fn write_log<W: Write>(log: &[LogEntry], mut w: W) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub table: NewTokenTable,
    pub log: Vec<LogEntry>,
    /// Added tokens without any usable snippet; their rows are untouched.
    pub untrained: Vec<String>,
    /// Updated full tables when the objective trains them.
    pub base_input: Option<Tensor<f32>>,
    pub base_output: Option<Tensor<f32>>,
}

/// What a distillation objective compares against.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets<F> {
    pub state: Option<Tensor<F>>,
    pub logits: Option<Tensor<F>>,
}

pub fn teacher_targets<F: Real>(
    weights: &Weights<F>,
    ids: &[u32],
    objective: &ObjectiveConfig,
) -> Result<TeacherTargets<F>> {
    let n_layers = weights.config.n_layers;
    let tap = objective.tap(n_layers)?;
    match objective.objective {
        ObjectiveKind::Td => {
            let mut opts = ForwardOptions::tap(tap);
            opts.post_norm_tap = !objective.pre_norm_tap;
            let tr = weights.forward(ids, None, &opts)?;
            Ok(TeacherTargets {
                state: Some(tr.state(tap).expect("tapped").clone()),
                logits: None,
            })
        }
        ObjectiveKind::TdLogits | ObjectiveKind::TdKl => {
            let tr = weights.forward(ids, None, &ForwardOptions::full(n_layers).with_logits())?;
            Ok(TeacherTargets {
                state: None,
                logits: tr.logits,
            })
        }
        ObjectiveKind::NtpMasked | ObjectiveKind::NtpAll => Ok(TeacherTargets {
            state: None,
            logits: None,
        }),
    }
}

/// Teacher outputs keyed by the teacher token sequence. Filled during the
/// first epoch and reused afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache<F> {
    entries: BTreeMap<Vec<u32>, TeacherTargets<F>>,
}

impl<F> Default for TeacherCache<F> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<F: Real> TeacherCache<F> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, ids: &[u32]) -> Option<&TeacherTargets<F>> {
        self.entries.get(ids)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], &TeacherTargets<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v))
    }

    fn fetch(
        &mut self,
        weights: &Weights<F>,
        ids: &[u32],
        objective: &ObjectiveConfig,
    ) -> Result<&TeacherTargets<F>> {
        if !self.entries.contains_key(ids) {
            let t = teacher_targets(weights, ids, objective)?;
            self.entries.insert(ids.to_vec(), t);
        }
        Ok(&self.entries[ids])
    }
}

/// Per-snippet losses and the upstream gradients that produce them.
struct SnippetPass<F> {
    trace: ForwardTrace<F>,
    td: Option<(f64, Upstream<F>)>,
    ntp: Option<(f64, Upstream<F>)>,
    weight_pairs: usize,
}

fn student_pass<F: Real>(
    weights: &Weights<F>,
    added: &AddedEmbeddings<F>,
    p: &Prepared,
    teacher: &TeacherTargets<F>,
    objective: &ObjectiveConfig,
    exclude_from: Option<usize>,
) -> Result<SnippetPass<F>> {
    let n_layers = weights.config.n_layers;
    let tap = objective.tap(n_layers)?;
    let v = weights.config.vocab_size;
    let logits = objective.needs_logits();
    let mut opts = if logits {
        ForwardOptions::full(n_layers).with_logits()
    } else {
        ForwardOptions::tap(tap)
    };
    opts.keep_cache = true;
    opts.post_norm_tap = !objective.pre_norm_tap;
    let trace = weights.forward(&p.student_ids, Some(added), &opts)?;
    let logits_upstream = |g: Tensor<F>| Upstream {
        states: Vec::new(),
        logits: Some(g),
    };
    let td = match objective.objective {
        ObjectiveKind::Td => {
            let lg = td_loss(
                teacher.state.as_ref().expect("teacher state"),
                trace.state(tap).expect("tapped"),
                &p.map,
            )?;
            Some((
                lg.loss,
                Upstream {
                    states: vec![(tap, lg.grad)],
                    logits: None,
                },
            ))
        }
        ObjectiveKind::TdLogits => {
            let lg = logit_mse_loss(
                teacher.logits.as_ref().expect("teacher logits"),
                trace.logits.as_ref().expect("logits"),
                &p.map,
                v,
            )?;
            Some((lg.loss, logits_upstream(lg.grad)))
        }
        ObjectiveKind::TdKl => {
            let lg = kl_loss(
                teacher.logits.as_ref().expect("teacher logits"),
                trace.logits.as_ref().expect("logits"),
                &p.map,
                v,
            )?;
            Some((lg.loss, logits_upstream(lg.grad)))
        }
        _ => None,
    };
    let wants_ntp = !objective.objective.is_distillation() || objective.combine != Combine::None;
    let ntp = if wants_ntp {
        let lg = ntp_loss(
            trace.logits.as_ref().expect("logits"),
            &p.student_ids,
            exclude_from,
        )?;
        Some((lg.loss, logits_upstream(lg.grad)))
    } else {
        None
    };
    Ok(SnippetPass {
        trace,
        td,
        ntp,
        weight_pairs: p.map.len(),
    })
}

fn scaled<F: Real>(up: &Upstream<F>, s: f64) -> Upstream<F> {
    let f = F::of(s);
    Upstream {
        states: up
            .states
            .iter()
            .map(|(l, g)| {
                let mut g = g.clone();
                g.scale(f);
                (*l, g)
            })
            .collect(),
        logits: up.logits.as_ref().map(|g| {
            let mut g = g.clone();
            g.scale(f);
            g
        }),
    }
}

fn merge<F: Real>(a: Upstream<F>, b: Upstream<F>) -> Result<Upstream<F>> {
    let mut states = a.states;
    states.extend(b.states);
    let logits = match (a.logits, b.logits) {
        (Some(mut x), Some(y)) => {
            x.add_assign(&y)?;
            Some(x)
        }
        (x, y) => x.or(y),
    };
    Ok(Upstream { states, logits })
}

/// Dense gradient buffers for one optimizer step.
struct StepGrads<F> {
    added_in: Tensor<F>,
    added_out: Tensor<F>,
    touched_in: BTreeSet<usize>,
    touched_out: BTreeSet<usize>,
    base_in: Option<Tensor<F>>,
    base_out: Option<Tensor<F>>,
}

impl<F: Real> StepGrads<F> {
    fn new(k: usize, d: usize, v: usize, full: bool, untied: bool) -> Self {
        Self {
            added_in: Tensor::zeros(&[k, d]),
            added_out: Tensor::zeros(&[k, d]),
            touched_in: BTreeSet::new(),
            touched_out: BTreeSet::new(),
            base_in: full.then(|| Tensor::zeros(&[v, d])),
            base_out: (full && untied).then(|| Tensor::zeros(&[v, d])),
        }
    }

    fn add(&mut self, b: &GradBundle<F>, v: usize, tied: bool) -> Result<()> {
        for (rows, output) in [(&b.input, false), (&b.output, true)] {
            let Some(rows) = rows else { continue };
            let to_output = output && !tied;
            for (r, &id) in rows.ids.iter().enumerate() {
                let id = id as usize;
                let dst = if id >= v {
                    let (table, touched) = if to_output {
                        (&mut self.added_out, &mut self.touched_out)
                    } else {
                        (&mut self.added_in, &mut self.touched_in)
                    };
                    touched.insert(id - v);
                    Some(table.row_mut(id - v))
                } else {
                    let table = if to_output {
                        self.base_out.as_mut()
                    } else {
                        self.base_in.as_mut()
                    };
                    table.map(|t| t.row_mut(id))
                };
                if let Some(dst) = dst {
                    for (o, &x) in dst.iter_mut().zip(rows.grads.row(r)) {
                        *o += x;
                    }
                }
            }
        }
        Ok(())
    }

    fn norm(&self) -> f64 {
        let mut s = self.added_in.squared_norm() + self.added_out.squared_norm();
        if let Some(t) = &self.base_in {
            s += t.squared_norm();
        }
        if let Some(t) = &self.base_out {
            s += t.squared_norm();
        }
        s.sqrt()
    }
}

/// Builds the batches of one epoch: a seeded shuffle of all snippets, or,
/// in isolated mode, per-target batches in shuffled order.
fn epoch_batches(
    prepared: &[Prepared],
    batch: usize,
    joint: bool,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut rng = crate::seed::rng(seed, &format!("train/shuffle/{epoch}"));
    if joint {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        return order.chunks(batch).map(<[usize]>::to_vec).collect();
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in prepared.iter().enumerate() {
        groups.entry(p.target_id).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut g) in groups {
        g.shuffle(&mut rng);
        batches.extend(g.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

fn requested_rows(p: &Prepared, joint: bool, v: usize) -> BTreeSet<u32> {
    if joint {
        p.student_ids
            .iter()
            .copied()
            .filter(|&id| id as usize >= v)
            .collect()
    } else {
        BTreeSet::from([p.target_id])
    }
}

/// Trains the added rows of `start` on `snippets`. Original weights are
/// never modified; with the unmasked next-token objective the full
/// embedding tables are trained on a private copy returned in the outcome.
pub fn train_embeddings<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    snippets: &SnippetSet,
    start: &NewTokenTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_embeddings_cached(
        weights,
        ext,
        snippets,
        start,
        cfg,
        &mut TeacherCache::default(),
    )
}

/// [`train_embeddings`] with a caller-owned teacher cache. The cache must
/// only be shared between runs with the same weights and objective.
pub fn train_embeddings_cached<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    snippets: &SnippetSet,
    start: &NewTokenTable,
    cfg: &TrainConfig,
    teacher_cache: &mut TeacherCache<F>,
) -> Result<TrainOutcome> {
    let n_layers = weights.config.n_layers;
    cfg.validate(n_layers)?;
    if snippets.is_empty() {
        return Err(Error::Input("no snippets to train on".into()));
    }
    let v = weights.config.vocab_size;
    let d = weights.config.d_model;
    let k = start.count();
    if ext.added().len() != k || start.base_vocab_size != v {
        return Err(Error::Config("table does not match the vocabulary".into()));
    }
    let obj = &cfg.objective;
    let full = obj.objective == ObjectiveKind::NtpAll;
    let tied = weights.is_tied();
    let exclude_from = (start.output_mode == OutputMode::Exclude && !tied).then_some(v);

    let mut prepared = prepare_all(snippets, ext, obj.align_options())?;
    if obj.objective.is_distillation() {
        prepared.retain(|p| {
            if p.map.is_empty() {
                log::warn!("skipping a {:?} snippet without mapped positions", p.target);
            }
            !p.map.is_empty()
        });
    }
    let covered: BTreeSet<u32> = prepared.iter().map(|p| p.target_id).collect();
    let untrained: Vec<String> = start
        .tokens
        .iter()
        .filter(|t| !covered.contains(&t.id))
        .map(|t| String::from_utf8_lossy(&t.string).into_owned())
        .collect();
    for t in &untrained {
        log::warn!("no usable snippets for {t:?}; keeping its initial row");
    }

    let mut table = start.clone();
    table.max_norm = cfg.max_norm.or(table.max_norm);
    let mut model = full.then(|| weights.clone());
    let mut in_states: Vec<AdamState> = (0..k).map(|_| AdamState::new(d)).collect();
    let mut out_states: Vec<AdamState> = (0..k).map(|_| AdamState::new(d)).collect();
    let mut base_in_state = full.then(|| AdamState::new(v * d));
    let mut base_out_state = (full && !tied).then(|| AdamState::new(v * d));
    let learned_out = start.output_mode == OutputMode::Learned && !tied;
    if learned_out && table.output.is_none() {
        table.output = Some(Tensor::zeros(&[k, d]));
    }

    let batches_per_epoch = if prepared.is_empty() {
        0
    } else {
        epoch_batches(&prepared, cfg.batch_size, obj.joint, cfg.seed, 0).len()
    };
    let total = batches_per_epoch * cfg.epochs;
    let schedule = Schedule::WarmupConstant {
        peak: cfg.lr,
        warmup: (cfg.warmup_fraction * total as f64).round() as usize,
    };
    let mut log = Vec::with_capacity(total);
    let mut trained_steps = vec![0usize; k];
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(&prepared, cfg.batch_size, obj.joint, cfg.seed, epoch) {
            let added: AddedEmbeddings<F> = table.added();
            let w: &Weights<F> = model.as_ref().unwrap_or(weights);
            let mut passes = Vec::with_capacity(batch.len());
            for &i in &batch {
                let teacher = teacher_cache.fetch(weights, &prepared[i].teacher_ids, obj)?;
                passes.push(student_pass(
                    w,
                    &added,
                    &prepared[i],
                    teacher,
                    obj,
                    exclude_from,
                )?);
            }

            let b = passes.len() as f64;
            let total_pairs: usize = passes.iter().map(|p| p.weight_pairs).sum();
            let td_weight = |p: &SnippetPass<F>| {
                if obj.flat_mean {
                    p.weight_pairs as f64 / total_pairs.max(1) as f64
                } else {
                    1.0 / b
                }
            };
            let loss_td = obj.objective.is_distillation().then(|| {
                passes
                    .iter()
                    .map(|p| td_weight(p) * p.td.as_ref().expect("distillation").0)
                    .sum::<f64>()
            });
            let loss_ntp = passes.first().and_then(|p| p.ntp.as_ref()).map(|_| {
                passes
                    .iter()
                    .map(|p| p.ntp.as_ref().expect("ntp").0)
                    .sum::<f64>()
                    / b
            });
            let (loss, alpha, ntp_scale) = match (loss_td, loss_ntp) {
                (Some(td), Some(ntp)) => {
                    let c = combine(td, ntp, obj.combine);
                    (c.loss, Some(c.alpha), c.alpha)
                }
                (Some(td), None) => (td, None, 0.0),
                (None, Some(ntp)) => (ntp, None, 1.0),
                (None, None) => unreachable!("every objective has a term"),
            };
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: "loss is not finite".into(),
                });
            }

            let mut grads = StepGrads::new(k, d, v, full, !tied);
            for (pass, &i) in passes.iter().zip(&batch) {
                let p = &prepared[i];
                let mut upstream = Upstream::default();
                if let Some((_, up)) = &pass.td {
                    upstream = merge(upstream, scaled(up, td_weight(pass)))?;
                }
                if let Some((_, up)) = &pass.ntp {
                    upstream = merge(upstream, scaled(up, ntp_scale / b))?;
                }
                let rows = requested_rows(p, obj.joint, v);
                let request = if full {
                    GradRequest {
                        input_rows: RowSelection::All,
                        output_rows: RowSelection::All,
                        ..Default::default()
                    }
                } else if obj.head_only {
                    GradRequest {
                        output_rows: RowSelection::Rows(rows),
                        ..Default::default()
                    }
                } else {
                    let has_logit_grad = upstream.logits.is_some();
                    GradRequest {
                        input_rows: RowSelection::Rows(rows.clone()),
                        output_rows: if has_logit_grad && (learned_out || tied) {
                            RowSelection::Rows(rows)
                        } else {
                            RowSelection::None
                        },
                        ..Default::default()
                    }
                };
                let bundle = w.backward(&pass.trace, Some(&added), &upstream, &request)?;
                grads.add(&bundle, v, tied)?;
            }

            let lr = schedule.lr_at(step);
            let grad_norm = grads.norm();
            if !grad_norm.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: "gradient is not finite".into(),
                });
            }
            for &r in &grads.touched_in {
                adamw_step(
                    table.input.row_mut(r),
                    &cast_row(grads.added_in.row(r)),
                    &mut in_states[r],
                    lr,
                    &cfg.adam,
                )?;
                trained_steps[r] += 1;
            }
            if let Some(out) = table.output.as_mut() {
                for &r in &grads.touched_out {
                    adamw_step(
                        out.row_mut(r),
                        &cast_row(grads.added_out.row(r)),
                        &mut out_states[r],
                        lr,
                        &cfg.adam,
                    )?;
                }
            }
            if let Some(m) = model.as_mut() {
                if let (Some(g), Some(s)) = (&grads.base_in, base_in_state.as_mut()) {
                    adamw_step(m.tok_emb.data_mut(), g.data(), s, lr, &cfg.adam)?;
                }
                if let (Some(g), Some(s)) = (&grads.base_out, base_out_state.as_mut()) {
                    adamw_step(m.out_emb_mut().data_mut(), g.data(), s, lr, &cfg.adam)?;
                }
            }
            table.apply_clamp();
            log.push(LogEntry {
                step,
                lr,
                loss,
                loss_td,
                loss_ntp,
                alpha,
                grad_norm,
            });
            step += 1;
        }
    }

    let name = serde_json::to_value(obj.objective)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    for (t, &n) in table.tokens.iter_mut().zip(&trained_steps) {
        if n > 0 {
            t.provenance.trained_with = Some(name.clone());
            t.provenance.steps += n;
        }
    }
    let (base_input, base_output) = match model {
        Some(m) => (
            Some(m.tok_emb.cast()),
            (!m.is_tied()).then(|| m.out_emb().cast()),
        ),
        None => (None, None),
    };
    Ok(TrainOutcome {
        table,
        log,
        untrained,
        base_input,
        base_output,
    })
}

fn cast_row<F: Real>(row: &[F]) -> Vec<f32> {
    row.iter().map(|v| v.as_f64() as f32).collect()
}
