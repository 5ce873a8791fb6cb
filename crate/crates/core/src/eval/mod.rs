//! Evaluation reports: compression, hidden-state fidelity, duplicate-token
//! recovery and definition-prompt generation diffs.

mod report;

pub use report::{config_digest, Aggregate, Report};

use serde::{Deserialize, Serialize};

use crate::corpus::SnippetSet;
use crate::error::{Error, Result};
use crate::model::{generate, DecodeMode, OutputMode, Weights};
use crate::numerics::Real;
use crate::objectives::{InitMethod, NewTokenTable};
use crate::tokenizer::{ExtendedVocab, Tokenizer};
use crate::trainer::{
    mean_present, prepare_all, score_snippets, train_embeddings, TrainConfig, TrainOutcome,
};

pub const DEFINITION_TEMPLATE: &str = "The word{token} is defined as";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub index: usize,
    pub base_tokens: usize,
    pub extended_tokens: usize,
    /// `(extended - base) / base` in percent; zero for empty texts.
    pub delta_pct: f64,
}

/// Token counts of every text under both tokenizers. The summary holds the
/// total counts and the ratio of summed squared lengths, a proxy for
/// attention cost.
pub fn compression_report<S: AsRef<str>>(
    texts: &[S],
    ext: &ExtendedVocab,
    seed: u64,
) -> Result<Report<CompressionRow>> {
    let rows: Vec<CompressionRow> = texts
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let bytes = t.as_ref().as_bytes();
            let base_tokens = ext.encode_base(bytes).len();
            let extended_tokens = ext.encode(bytes).len();
            let delta_pct = if base_tokens == 0 {
                0.0
            } else {
                100.0 * (extended_tokens as f64 - base_tokens as f64) / base_tokens as f64
            };
            CompressionRow {
                index,
                base_tokens,
                extended_tokens,
                delta_pct,
            }
        })
        .collect();
    let added: Vec<String> = ext.added().iter().map(|a| a.text()).collect();
    let mut report = Report::new("compression", seed, &added, rows)?;
    report.aggregate("delta_pct", |r| Some(r.delta_pct));
    let sum = |f: fn(&CompressionRow) -> usize| report.rows.iter().map(f).sum::<usize>() as f64;
    let sq = |f: fn(&CompressionRow) -> usize| {
        report
            .rows
            .iter()
            .map(|r| (f(r) as f64).powi(2))
            .sum::<f64>()
    };
    let (base, extended) = (sum(|r| r.base_tokens), sum(|r| r.extended_tokens));
    let (base_sq, extended_sq) = (sq(|r| r.base_tokens), sq(|r| r.extended_tokens));
    report.summary.insert("base_tokens".into(), base);
    report.summary.insert("extended_tokens".into(), extended);
    if base_sq > 0.0 {
        report
            .summary
            .insert("squared_length_ratio".into(), extended_sq / base_sq);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub token: String,
    pub snippets: usize,
    /// Mean held-out distillation loss at the tap layer.
    pub td: Option<f64>,
    /// Mean KL from teacher to student at mapped positions, original
    /// vocabulary only.
    pub kl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub tap_layer: usize,
    pub post_norm_tap: bool,
}

/// Held-out distillation loss and behavioural KL per added token, with
/// macro averages over tokens.
pub fn fidelity_report<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    table: &NewTokenTable,
    heldout: &SnippetSet,
    cfg: FidelityConfig,
    seed: u64,
) -> Result<Report<FidelityRow>> {
    let prepared = prepare_all(heldout, ext, Default::default())?;
    let scores = score_snippets(
        weights,
        &table.added(),
        &prepared,
        cfg.tap_layer,
        cfg.post_norm_tap,
        None,
    )?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for info in &table.tokens {
        let token = String::from_utf8_lossy(&info.string).into_owned();
        let mine: Vec<_> = scores.iter().filter(|s| s.target == token).collect();
        if mine.is_empty() {
            notes.push(format!("{token:?}: no held-out snippets"));
            continue;
        }
        rows.push(FidelityRow {
            token,
            snippets: mine.len(),
            td: mean_present(mine.iter().map(|s| s.td)),
            kl: mean_present(mine.iter().map(|s| s.kl)),
        });
    }
    let mut report = Report::new("fidelity", seed, &(cfg, &table.tokens), rows)?;
    report.notes = notes;
    report.aggregate("td", |r| r.td);
    report.aggregate("kl", |r| r.kl);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub token: String,
    pub original_id: u32,
    pub steps: usize,
    pub baseline_td: f64,
    pub final_td: f64,
    pub final_kl: f64,
    /// Cosine between the learned row and the original token's row.
    pub cosine: f64,
    pub pass: bool,
}

/// Held-out ratio below which recovery counts as a pass.
pub const RECOVERY_RATIO: f64 = 1e-3;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Duplicate-token recovery: `ext` must add exactly one string that is
/// already a single original token. Trains from `start` (random init by
/// default) and compares held-out loss against the random-init baseline.
pub fn recovery_test<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    train: &SnippetSet,
    heldout: &SnippetSet,
    start: Option<&NewTokenTable>,
    cfg: &TrainConfig,
) -> Result<(Report<RecoveryRow>, TrainOutcome)> {
    let [added] = ext.added() else {
        return Err(Error::Config(
            "recovery needs exactly one added token".into(),
        ));
    };
    let [original_id] = added.subtokens[..] else {
        return Err(Error::Config(format!(
            "{:?} is not a single original token",
            added.text()
        )));
    };
    let mode = OutputMode::Zeros;
    let random = NewTokenTable::initialize(weights, ext, InitMethod::Random, mode, cfg.seed)?;
    let start = start.cloned().unwrap_or_else(|| random.clone());
    let tap = cfg.objective.tap(weights.config.n_layers)?;
    let post_norm = !cfg.objective.pre_norm_tap;
    let prepared = prepare_all(heldout, ext, cfg.objective.align_options())?;
    let measure = |t: &NewTokenTable| -> Result<(f64, f64)> {
        let s = score_snippets(weights, &t.added(), &prepared, tap, post_norm, None)?;
        let td = mean_present(s.iter().map(|x| x.td));
        let kl = mean_present(s.iter().map(|x| x.kl));
        td.zip(kl)
            .ok_or_else(|| Error::Input("no held-out snippet has mapped positions".into()))
    };
    let (baseline_td, _) = measure(&random)?;
    let outcome = train_embeddings(weights, ext, train, &start, cfg)?;
    let (final_td, final_kl) = measure(&outcome.table)?;
    let learned: Vec<f64> = outcome
        .table
        .input
        .row(0)
        .iter()
        .map(|&v| v as f64)
        .collect();
    let reference: Vec<f64> = weights
        .tok_emb
        .row(original_id as usize)
        .iter()
        .map(|v| v.as_f64())
        .collect();
    let row = RecoveryRow {
        token: added.text(),
        original_id,
        steps: outcome.log.len(),
        baseline_td,
        final_td,
        final_kl,
        cosine: cosine(&learned, &reference),
        pass: final_td <= RECOVERY_RATIO * baseline_td,
    };
    let mut report = Report::new("recovery", cfg.seed, cfg, vec![row])?;
    report.aggregate("final_td", |r| Some(r.final_td));
    report.aggregate("final_kl", |r| Some(r.final_kl));
    Ok((report, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionRow {
    pub token: String,
    pub prompt: String,
    /// Greedy continuation with the token spelled out in original subtokens.
    pub base_continuation: String,
    /// Greedy continuation with the single added token.
    pub new_continuation: String,
    pub common_prefix: usize,
    /// Levenshtein distance over token ids divided by the longer length.
    pub edit_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionConfig {
    pub template: String,
    pub max_new_tokens: usize,
}

impl Default for DefinitionConfig {
    fn default() -> Self {
        Self {
            template: DEFINITION_TEMPLATE.into(),
            max_new_tokens: 24,
        }
    }
}

/// Length of the longest common prefix.
pub fn common_prefix(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Levenshtein distance over ids normalised by the longer sequence; zero
/// when both are empty.
pub fn normalized_edit_distance(a: &[u32], b: &[u32]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    strsim::generic_levenshtein(&a.to_vec(), &b.to_vec()) as f64 / longest as f64
}

/// Greedy continuations of the definition prompt with and without the
/// added token. Added ids are left out of the output distribution so both
/// continuations are over the original vocabulary.
pub fn definition_diff<F: Real>(
    weights: &Weights<F>,
    ext: &ExtendedVocab,
    table: &NewTokenTable,
    tokens: &[String],
    cfg: &DefinitionConfig,
    seed: u64,
) -> Result<Report<DefinitionRow>> {
    let added = table.added();
    let bos = ext.base().bos();
    let decode = |ids: &[u32]| -> Result<String> {
        Ok(String::from_utf8_lossy(&ext.decode(ids)?).into_owned())
    };
    let mut rows = Vec::with_capacity(tokens.len());
    for token in tokens {
        if ext.find(token.as_bytes()).is_none() {
            return Err(Error::Config(format!("{token:?} is not an added token")));
        }
        let prompt = cfg.template.replace("{token}", token);
        let mut base_prompt = vec![bos];
        base_prompt.extend(ext.encode_base(prompt.as_bytes()));
        let mut new_prompt = vec![bos];
        new_prompt.extend(ext.encode(prompt.as_bytes()));
        let run = |p: &[u32], a| -> Result<Vec<u32>> {
            let out = generate(
                weights,
                a,
                p,
                cfg.max_new_tokens,
                DecodeMode::Greedy,
                OutputMode::Exclude,
            )?;
            Ok(out[p.len()..].to_vec())
        };
        let a = run(&base_prompt, None)?;
        let b = run(&new_prompt, Some(&added))?;
        rows.push(DefinitionRow {
            token: token.clone(),
            prompt,
            base_continuation: decode(&a)?,
            new_continuation: decode(&b)?,
            common_prefix: common_prefix(&a, &b),
            edit_distance: normalized_edit_distance(&a, &b),
        });
    }
    let mut report = Report::new("definitions", seed, cfg, rows)?;
    report.aggregate("edit_distance", |r| Some(r.edit_distance));
    report.aggregate("common_prefix", |r| Some(r.common_prefix as f64));
    Ok(report)
}
