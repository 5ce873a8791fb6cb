//! Compares initialization and training methods on the shipped fixture.
//!
//! Usage: `compare_methods [n_tokens] [seed] [lr...]`

use tokdistill::corpus::{retrieve_snippets, RetrieveOptions};
use tokdistill::fixture::{load_fixture, FixtureSpec};
use tokdistill::model::OutputMode;
use tokdistill::objectives::{InitMethod, NewTokenTable, ObjectiveKind};
use tokdistill::tokenizer::{
    select_tokens, word_initial, ExtendOptions, ExtendedVocab, SelectOptions,
};
use tokdistill::trainer::{
    mean_present, prepare_all, score_snippets, train_embeddings, TrainConfig,
};

fn main() -> tokdistill::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_tokens: usize = args.first().map_or(20, |a| a.parse().expect("count"));
    let seed: u64 = args.get(1).map_or(0, |a| a.parse().expect("seed"));
    let lrs: Vec<f64> = args
        .iter()
        .skip(2)
        .map(|a| a.parse().expect("lr"))
        .collect();
    let lrs = if lrs.is_empty() { vec![1e-2] } else { lrs };

    let fx = load_fixture()?;
    let spec = FixtureSpec::default();
    let corpus = spec.corpus();
    let train_docs = spec.fresh_corpus(1000 + seed, 2000);
    let held_docs = spec.fresh_corpus(2000 + seed, 1000);
    let words = select_tokens(
        corpus.iter().map(String::as_str),
        held_docs.iter().map(String::as_str),
        &fx.vocab,
        SelectOptions::default(),
    );
    let words: Vec<String> = words.into_iter().take(n_tokens).collect();
    let strings: Vec<Vec<u8>> = words.iter().map(|w| word_initial(w)).collect();
    let targets: Vec<String> = strings
        .iter()
        .map(|s| String::from_utf8(s.clone()).unwrap())
        .collect();
    let ext = ExtendedVocab::new(fx.vocab.clone(), &strings, ExtendOptions::default())?;
    let opts = RetrieveOptions {
        seed,
        ..Default::default()
    };
    let train = retrieve_snippets(&train_docs, &targets, &ext, opts)?.snippets;
    let held = retrieve_snippets(
        &held_docs,
        &targets,
        &ext,
        RetrieveOptions {
            n_per_target: 5,
            ..opts
        },
    )?
    .snippets;
    println!(
        "{} tokens, {} train snippets, {} held-out",
        words.len(),
        train.len(),
        held.len()
    );

    let w = &fx.weights;
    let n_layers = w.config.n_layers;
    let prepared = prepare_all(&held, &ext, Default::default())?;
    let v = w.config.vocab_size;
    let score = |t: &NewTokenTable| -> tokdistill::Result<(f64, f64, f64)> {
        let ex = (t.output_mode == OutputMode::Exclude).then_some(v);
        let s = score_snippets(w, &t.added(), &prepared, n_layers, true, ex)?;
        Ok((
            mean_present(s.iter().map(|x| x.td)).unwrap(),
            mean_present(s.iter().map(|x| x.kl)).unwrap(),
            mean_present(s.iter().map(|x| Some(x.ntp))).unwrap(),
        ))
    };
    let random = NewTokenTable::initialize(w, &ext, InitMethod::Random, OutputMode::Zeros, seed)?;
    let mean = NewTokenTable::initialize(w, &ext, InitMethod::Mean, OutputMode::Zeros, seed)?;
    println!("random {:?}", score(&random)?);
    println!("mean   {:?}", score(&mean)?);
    let modes: Vec<OutputMode> = std::env::var("MODES")
        .unwrap_or_else(|_| "zeros".into())
        .split(',')
        .map(|m| m.parse().expect("mode"))
        .collect();
    for kind in [ObjectiveKind::NtpMasked, ObjectiveKind::Td] {
        for &mode in &modes {
            let mut mean = mean.clone();
            mean.output_mode = mode;
            if mode == OutputMode::Learned {
                mean = NewTokenTable::initialize(w, &ext, InitMethod::Mean, mode, seed)?;
            }
            for &lr in &lrs {
                let mut cfg = TrainConfig {
                    lr,
                    seed,
                    ..Default::default()
                };
                cfg.objective.objective = kind;
                let t0 = std::time::Instant::now();
                let out = train_embeddings(w, &ext, &train, &mean, &cfg)?;
                println!(
                    "{kind:?} {mode:?} lr {lr:e}: {:?} steps {} final loss {:.4} ({:.1}s)",
                    score(&out.table)?,
                    out.log.len(),
                    out.log.last().unwrap().loss,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
    Ok(())
}
