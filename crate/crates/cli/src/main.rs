//! Command-line front end for vocabulary extension and embedding training.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numeric or training error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use tokdistill::corpus::{
    generate_snippets, load_corpus, retrieve_snippets, GenerateOptions, RetrieveOptions, SnippetSet,
};
use tokdistill::eval::{
    compression_report, definition_diff, fidelity_report, recovery_test, DefinitionConfig,
    FidelityConfig, Report,
};
use tokdistill::fixture::{build_fixture, FixtureSpec};
use tokdistill::model::{
    generate, load_checkpoint, save_checkpoint, DecodeMode, OutputMode, Weights,
};
use tokdistill::objectives::{Combine, InitMethod, NewTokenTable, ObjectiveKind};
use tokdistill::tokenizer::{
    select_tokens, train_bpe, word_initial, ExtendOptions, ExtendedVocab, SelectOptions, Tokenizer,
    Vocab,
};
use tokdistill::trainer::{
    continued_train, lr_sweep, train_embeddings, write_log, ContinuedConfig, TrainConfig,
    TrainOutcome,
};
use tokdistill::{Error, ErrorClass, Result};

#[derive(Debug, Parser)]
#[command(
    name = "tokdistill",
    version,
    about = "Learn embeddings for new tokens by hidden-state distillation"
)]
struct Cli {
    /// JSON configuration for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run the model in 64-bit floating point.
    #[arg(long = "f64", global = true)]
    double: bool,
    /// Output file or directory; stdout when omitted and the output is text.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a byte-level BPE vocabulary.
    TokenizeTrain {
        /// Plain-text lines or JSONL with a `text` field.
        #[arg(long)]
        corpus: PathBuf,
        /// Target vocabulary size, bytes and specials included.
        #[arg(long, default_value_t = 512)]
        vocab_size: usize,
    },
    /// List candidate new whole-word tokens.
    SelectTokens {
        /// Base vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Plain-text lines or JSONL with a `text` field.
        #[arg(long)]
        corpus: PathBuf,
        /// Texts whose words are candidates.
        #[arg(long)]
        eval: PathBuf,
        /// Minimum occurrences in the evaluation texts.
        #[arg(long, default_value_t = 5)]
        min_eval_count: usize,
        /// Minimum occurrences in the training corpus.
        #[arg(long, default_value_t = 25)]
        min_corpus_count: usize,
        /// Keep at most this many candidates.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Add tokens to a vocabulary.
    ExtendVocab {
        /// Base vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// JSON array of strings, or one token per line.
        #[arg(long)]
        tokens: PathBuf,
        /// Prefix every token with a space, its word-initial form.
        #[arg(long)]
        word_initial: bool,
        /// Accept strings the base vocabulary already holds as one token.
        #[arg(long)]
        allow_duplicates: bool,
    },
    /// Sample corpus windows around every added token.
    Retrieve {
        /// Extended vocabulary JSON.
        #[arg(long)]
        ext: PathBuf,
        /// Plain-text lines or JSONL with a `text` field.
        #[arg(long)]
        corpus: PathBuf,
        /// Snippets per token.
        #[arg(long, default_value_t = 25)]
        n: usize,
        /// Window length in base tokens.
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
    /// Sample snippets from the model, prompted with each token.
    GenerateSnippets {
        #[command(flatten)]
        model: ModelArgs,
        /// Snippets per token.
        #[arg(long, default_value_t = 25)]
        n: usize,
        /// Snippet length in tokens.
        #[arg(long, default_value_t = 50)]
        length: usize,
        /// Sampling temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Rebuild the fixture tokenizer and teacher model.
    PretrainFixture {
        /// Optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Initialise embeddings for the added tokens.
    Init {
        #[command(flatten)]
        model: ModelArgs,
        /// `random` or `mean` of the subtoken embeddings.
        #[arg(long, default_value = "mean")]
        method: String,
        /// How rows for the new tokens enter the output layer.
        #[arg(long)]
        output_mode: Option<OutputMode>,
    },
    /// Train added embeddings.
    Train(TrainArgs),
    /// Continue next-token training of embeddings and outer layers.
    ContinuedTrain {
        #[command(flatten)]
        model: ModelArgs,
        /// Embedding table for the added tokens.
        #[arg(long)]
        table: PathBuf,
        /// Plain-text lines or JSONL with a `text` field.
        #[arg(long)]
        corpus: PathBuf,
        /// Optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Peak learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Token counts under the original and extended vocabularies.
    EvalCompression {
        /// Extended vocabulary JSON.
        #[arg(long)]
        ext: PathBuf,
        /// Texts to tokenize.
        #[arg(long)]
        texts: PathBuf,
    },
    /// Held-out distillation loss and KL per token.
    EvalFidelity {
        #[command(flatten)]
        model: ModelArgs,
        /// Embedding table for the added tokens.
        #[arg(long)]
        table: PathBuf,
        /// Held-out snippets.
        #[arg(long)]
        heldout: PathBuf,
        /// Layer whose hidden states are compared; the last layer when omitted.
        #[arg(long)]
        tap_layer: Option<usize>,
        /// Compare last-layer states before the final norm.
        #[arg(long)]
        pre_norm_tap: bool,
    },
    /// Duplicate an existing token and check that training recovers it.
    EvalRecovery {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Base vocabulary JSON.
        #[arg(long)]
        vocab: PathBuf,
        /// Existing token string to duplicate.
        #[arg(long)]
        token: String,
        /// Plain-text lines or JSONL with a `text` field.
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus for held-out snippets.
        #[arg(long)]
        heldout_corpus: PathBuf,
        /// Peak learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Passes over the snippets.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Greedy continuations of a definition prompt, spelled out vs. new token.
    EvalDefinitions {
        #[command(flatten)]
        model: ModelArgs,
        /// Embedding table for the added tokens.
        #[arg(long)]
        table: PathBuf,
        /// Tokens to compare; every added token when omitted.
        #[arg(long)]
        token: Vec<String>,
        /// Tokens to generate.
        #[arg(long)]
        max_new: Option<usize>,
    },
    /// Generate a continuation of a prompt.
    Generate {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Extended vocabulary; the base vocabulary is taken from it.
        #[arg(long)]
        ext: Option<PathBuf>,
        /// Base vocabulary JSON.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Embedding table for the added tokens.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Prompt text.
        #[arg(long)]
        prompt: String,
        /// Tokens to generate.
        #[arg(long, default_value_t = 32)]
        max_new: usize,
        /// Greedy when omitted.
        #[arg(long)]
        temperature: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Extended vocabulary JSON.
    #[arg(long)]
    ext: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training snippets JSONL.
    #[arg(long)]
    snippets: PathBuf,
    /// Starting table; subtoken mean when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Training objective.
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    /// How a second objective is added to distillation.
    #[arg(long)]
    combine: Option<Combine>,
    /// Layer whose hidden states are compared; the last layer when omitted.
    #[arg(long)]
    tap_layer: Option<usize>,
    /// Mix tokens within batches; `false` trains each token only on its own snippets.
    #[arg(long)]
    joint: Option<bool>,
    /// Peak learning rate.
    #[arg(long, conflicts_with = "lr_sweep")]
    lr: Option<f64>,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    lr_sweep: Option<Vec<f64>>,
    /// Snippets per target held out for the sweep.
    #[arg(long, default_value_t = 5)]
    heldout: usize,
    /// Passes over the snippets.
    #[arg(long)]
    epochs: Option<usize>,
    /// Snippets per step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// How rows for the new tokens enter the output layer.
    #[arg(long)]
    output_mode: Option<OutputMode>,
    /// Per-step JSONL training log.
    #[arg(long)]
    log: Option<PathBuf>,
}

/// The loaded model at the requested precision.
enum Model {
    Single(Weights<f32>),
    Double(Weights<f64>),
}

macro_rules! with_model {
    ($model:expr, $w:ident => $body:expr) => {
        match $model {
            Model::Single($w) => $body,
            Model::Double($w) => $body,
        }
    };
}

fn load_model(path: &Path, double: bool) -> Result<Model> {
    let w = load_checkpoint(path)?;
    Ok(if double {
        Model::Double(w.cast())
    } else {
        Model::Single(w)
    })
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Config("this command needs --out".into()))
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit_text(out, &s)
}

fn emit_report<R: Serialize>(out: Option<&Path>, report: &Report<R>) -> Result<()> {
    emit_text(out, &report.to_json()?)?;
    if let Some(p) = out {
        let tsv = fs::File::create(p.with_extension("tsv"))?;
        report.write_tsv(tsv)?;
    }
    Ok(())
}

fn read_token_list(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path)?;
    if raw.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&raw)?);
    }
    Ok(raw
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn load_table(path: &Path, ext: &ExtendedVocab) -> Result<NewTokenTable> {
    let table = NewTokenTable::load(path)?;
    let matches = table.count() == ext.added().len()
        && table
            .tokens
            .iter()
            .zip(ext.added())
            .all(|(t, a)| t.id == a.id && t.string == a.string);
    if !matches {
        return Err(Error::Config(
            "table does not match the extended vocabulary".into(),
        ));
    }
    Ok(table)
}

fn targets(ext: &ExtendedVocab) -> Vec<String> {
    ext.added().iter().map(|a| a.text()).collect()
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    let config = cli.config.as_deref();
    let seed = cli.seed;
    match cli.command {
        Command::TokenizeTrain { corpus, vocab_size } => {
            let docs = load_corpus(&corpus)?;
            let vocab = train_bpe(docs.iter().map(|d| d.as_bytes()), vocab_size)?;
            emit_text(out, &vocab.to_json()?)
        }
        Command::SelectTokens {
            vocab,
            corpus,
            eval,
            min_eval_count,
            min_corpus_count,
            limit,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let corpus = load_corpus(&corpus)?;
            let eval = load_corpus(&eval)?;
            let opts = SelectOptions {
                min_eval_count,
                min_corpus_count,
            };
            let mut words = select_tokens(
                corpus.iter().map(String::as_str),
                eval.iter().map(String::as_str),
                &vocab,
                opts,
            );
            if let Some(n) = limit {
                words.truncate(n);
            }
            emit_json(out, &words)
        }
        Command::ExtendVocab {
            vocab,
            tokens,
            word_initial: initial,
            allow_duplicates,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let strings: Vec<Vec<u8>> = read_token_list(&tokens)?
                .iter()
                .map(|t| {
                    if initial {
                        word_initial(t)
                    } else {
                        t.as_bytes().to_vec()
                    }
                })
                .collect();
            let ext = ExtendedVocab::new(vocab, &strings, ExtendOptions { allow_duplicates })?;
            emit_text(out, &ext.to_json()?)
        }
        Command::Retrieve {
            ext,
            corpus,
            n,
            window,
        } => {
            let ext = ExtendedVocab::load(&ext)?;
            let docs = load_corpus(&corpus)?;
            let mut opts: RetrieveOptions = read_config(config)?;
            opts.n_per_target = n;
            opts.window_tokens = window;
            opts.seed = seed;
            let found = retrieve_snippets(&docs, &targets(&ext), &ext, opts)?;
            for d in &found.deficits {
                log::warn!("{:?}: {} of {} snippets", d.target, d.found, d.wanted);
            }
            found.snippets.save(require_out(out)?)
        }
        Command::GenerateSnippets {
            model,
            n,
            length,
            temperature,
        } => {
            let ext = ExtendedVocab::load(&model.ext)?;
            let weights = load_model(&model.model, cli.double)?;
            let opts = GenerateOptions {
                n,
                length_tokens: length,
                temperature,
                seed,
            };
            let mut all = Vec::new();
            for t in targets(&ext) {
                all.extend(with_model!(&weights, w => generate_snippets(w, &ext, &t, opts))?);
            }
            SnippetSet::from_snippets(all).save(require_out(out)?)
        }
        Command::PretrainFixture { steps } => {
            let mut spec: FixtureSpec = read_config(config)?;
            spec.pretrain.seed = seed;
            if let Some(s) = steps {
                spec.pretrain.steps = s;
            }
            let dir = require_out(out)?;
            fs::create_dir_all(dir)?;
            let fx = build_fixture(&spec)?;
            fx.vocab.save(&dir.join("vocab.json"))?;
            save_checkpoint(&fx.weights, dir.join("model.ckpt"))?;
            fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
            if let Some(report) = fx.report {
                fs::write(
                    dir.join("pretrain.json"),
                    serde_json::to_string_pretty(&report)?,
                )?;
            }
            Ok(())
        }
        Command::Init {
            model,
            method,
            output_mode,
        } => {
            let method: InitMethod = method.parse()?;
            let ext = ExtendedVocab::load(&model.ext)?;
            let weights = load_model(&model.model, cli.double)?;
            let mode = output_mode.unwrap_or_default();
            let table =
                with_model!(&weights, w => NewTokenTable::initialize(w, &ext, method, mode, seed))?;
            table.save(require_out(out)?)
        }
        Command::Train(args) => train(args, config, seed, cli.double, out),
        Command::ContinuedTrain {
            model,
            table,
            corpus,
            steps,
            lr,
        } => {
            let ext = ExtendedVocab::load(&model.ext)?;
            let weights = load_checkpoint(&model.model)?;
            let table = load_table(&table, &ext)?;
            let docs = load_corpus(&corpus)?;
            let mut cfg: ContinuedConfig = read_config(config)?;
            cfg.seed = seed;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            let outcome = continued_train(&weights, &ext, &table, &docs, &cfg)?;
            save_checkpoint(&outcome.weights, require_out(out)?)
        }
        Command::EvalCompression { ext, texts } => {
            let ext = ExtendedVocab::load(&ext)?;
            let texts = load_corpus(&texts)?;
            emit_report(out, &compression_report(&texts, &ext, seed)?)
        }
        Command::EvalFidelity {
            model,
            table,
            heldout,
            tap_layer,
            pre_norm_tap,
        } => {
            let ext = ExtendedVocab::load(&model.ext)?;
            let weights = load_model(&model.model, cli.double)?;
            let table = load_table(&table, &ext)?;
            let heldout = SnippetSet::load(&heldout)?;
            let n_layers = with_model!(&weights, w => w.config.n_layers);
            let cfg = FidelityConfig {
                tap_layer: tap_layer.unwrap_or(n_layers),
                post_norm_tap: !pre_norm_tap,
            };
            let report =
                with_model!(&weights, w => fidelity_report(w, &ext, &table, &heldout, cfg, seed))?;
            emit_report(out, &report)
        }
        Command::EvalRecovery {
            model,
            vocab,
            token,
            corpus,
            heldout_corpus,
            lr,
            epochs,
        } => {
            let base = Vocab::load(&vocab)?;
            let ext = ExtendedVocab::new(
                base,
                &[token.as_bytes().to_vec()],
                ExtendOptions {
                    allow_duplicates: true,
                },
            )?;
            let weights = load_model(&model, cli.double)?;
            let mut cfg: TrainConfig = read_config(config)?;
            cfg.seed = seed;
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let opts = RetrieveOptions {
                n_per_target: cfg.snippets_per_target,
                window_tokens: cfg.window_tokens,
                seed,
            };
            let train = retrieve_snippets(
                &load_corpus(&corpus)?,
                std::slice::from_ref(&token),
                &ext,
                opts,
            )?
            .snippets;
            let held =
                retrieve_snippets(&load_corpus(&heldout_corpus)?, &[token], &ext, opts)?.snippets;
            let (report, _) =
                with_model!(&weights, w => recovery_test(w, &ext, &train, &held, None, &cfg))?;
            emit_report(out, &report)
        }
        Command::EvalDefinitions {
            model,
            table,
            token,
            max_new,
        } => {
            let ext = ExtendedVocab::load(&model.ext)?;
            let weights = load_model(&model.model, cli.double)?;
            let table = load_table(&table, &ext)?;
            let mut cfg: DefinitionConfig = read_config(config)?;
            if let Some(n) = max_new {
                cfg.max_new_tokens = n;
            }
            let tokens = if token.is_empty() {
                targets(&ext)
            } else {
                token
            };
            let report =
                with_model!(&weights, w => definition_diff(w, &ext, &table, &tokens, &cfg, seed))?;
            emit_report(out, &report)
        }
        Command::Generate {
            model,
            ext,
            vocab,
            table,
            prompt,
            max_new,
            temperature,
        } => {
            let ext = match (ext, vocab) {
                (Some(e), _) => ExtendedVocab::load(&e)?,
                (None, Some(v)) => {
                    ExtendedVocab::new(Vocab::load(&v)?, &[], ExtendOptions::default())?
                }
                (None, None) => {
                    return Err(Error::Config("generate needs --ext or --vocab".into()))
                }
            };
            let table = table.map(|t| load_table(&t, &ext)).transpose()?;
            let weights = load_model(&model, cli.double)?;
            let mut ids = vec![ext.base().bos()];
            ids.extend(ext.encode(prompt.as_bytes()));
            let mode = match temperature {
                Some(temperature) => DecodeMode::Temperature { temperature, seed },
                None => DecodeMode::Greedy,
            };
            let output = table
                .as_ref()
                .map_or(OutputMode::Exclude, |t| t.output_mode);
            let generated = with_model!(&weights, w => {
                let added = table.as_ref().map(|t| t.added());
                generate(w, added.as_ref(), &ids, max_new, mode, output)
            })?;
            let text = ext.decode(&generated[1..])?;
            emit_text(out, &format!("{}\n", String::from_utf8_lossy(&text)))
        }
    }
}

fn train(
    args: TrainArgs,
    config: Option<&Path>,
    seed: u64,
    double: bool,
    out: Option<&Path>,
) -> Result<()> {
    let ext = ExtendedVocab::load(&args.model.ext)?;
    let weights = load_model(&args.model.model, double)?;
    let snippets = SnippetSet::load(&args.snippets)?;
    let mut cfg: TrainConfig = read_config(config)?;
    cfg.seed = seed;
    if let Some(o) = args.objective {
        cfg.objective.objective = o;
    }
    if let Some(c) = args.combine {
        cfg.objective.combine = c;
    }
    if let Some(l) = args.tap_layer {
        cfg.objective.tap_layer = Some(l);
    }
    if let Some(j) = args.joint {
        cfg.objective.joint = j;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(m) = args.output_mode {
        cfg.objective.output_mode = m;
    }
    let start = match &args.init {
        Some(p) => load_table(p, &ext)?,
        None => with_model!(&weights, w => NewTokenTable::initialize(
            w,
            &ext,
            InitMethod::Mean,
            cfg.objective.output_mode,
            seed
        ))?,
    };
    let outcome: TrainOutcome = match &args.lr_sweep {
        Some(grid) => {
            let result = with_model!(&weights, w => lr_sweep(w, &ext, &snippets, &start, &cfg, grid, args.heldout))?;
            for p in &result.points {
                log::info!("lr {:e}: held-out {:.6}", p.lr, p.heldout);
            }
            if let Some(o) = out {
                let sweep_path = o.with_extension("sweep.json");
                fs::write(sweep_path, serde_json::to_string_pretty(&result.points)?)?;
            }
            result.best
        }
        None => with_model!(&weights, w => train_embeddings(w, &ext, &snippets, &start, &cfg))?,
    };
    for t in &outcome.untrained {
        log::warn!("{t:?} had no usable snippets");
    }
    if let Some(p) = &args.log {
        write_log(&outcome.log, fs::File::create(p)?)?;
    }
    outcome.table.save(require_out(out)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
