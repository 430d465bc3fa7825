//! Command-line front end: run configuration, subcommands and exit codes.
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 1 | runtime failure |
//! | 2 | usage error (unknown flag or subcommand) |
//! | 3 | missing input file or directory |
//! | 4 | config or input schema violation |
//! | 5 | inconsistent inputs (missing embeddings, pairs, checkpoint mismatch) |
//!
//! Failures print one JSON object on stderr: `{"error": kind, "code": n, "message": ...}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::apre::{Apre, ModelConfig, Prediction, ReviewFeatures, Variant};
use crate::aspair::{
    aspair_stats, compact_aspect_ids, extract_candidates, filter_pairs, load_pairs_jsonl, merge_synonym_aspects,
    resolve_word_positions, vocabulary_from_pairs, ASPair, write_pairs_jsonl, zipf_report, zipf_spearman, ExtractOptions,
    SynsetTable, DEFAULT_ITEM_PRONOUNS,
};
use crate::corpus::conllu::load_conllu;
use crate::corpus::{corpus_stats, filter_corpus, load_corpus, split_corpus, Corpus};
use crate::embed::{pseudo_embed, truncate, write_store, EmbeddingSource, EmbeddingStore};
use crate::error::Error;
use crate::interpret::{explain, render, ExplanationReport, Format};
use crate::sentiterm::{
    candidate_terms, count_contexts, fuse, load_lexicon, load_nn_terms, pmi_terms, PmiOptions, SeedSet,
    SentimentTermSet,
};
use crate::trainer::{
    evaluate, predict_positions, sweep, sweep_csv, train, BiasBaseline, SweepGrid, TrainConfig, TrainingData,
};

pub const SEED_ENV: &str = "ASPRE_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;
pub const EXIT_INCONSISTENT: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            kind,
            message: message.into(),
            path: None,
        }
    }

    fn missing(path: &Path, what: &str) -> Self {
        CliError {
            path: Some(path.to_owned()),
            ..CliError::new(EXIT_MISSING_INPUT, "missing_input", format!("{what} not found: {}", path.display()))
        }
    }

    fn schema(message: impl Into<String>) -> Self {
        CliError::new(EXIT_SCHEMA, "schema", message)
    }

    /// The machine-readable stderr line.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({"error": self.kind, "code": self.code, "message": self.message});
        if let Some(p) = &self.path {
            v["path"] = json!(p.display().to_string());
        }
        v.to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError {
                path: Some(path),
                ..CliError::new(EXIT_MISSING_INPUT, "missing_input", message)
            },
            Error::Io { path, .. } => CliError {
                path: Some(path),
                ..CliError::new(EXIT_RUNTIME, "io", message)
            },
            Error::Parse { path, .. } => CliError {
                path: Some(path),
                ..CliError::new(EXIT_SCHEMA, "schema", message)
            },
            Error::Json(_) => CliError::schema(message),
            Error::MissingReviews(_) | Error::DuplicateReview(_) | Error::Store(_) | Error::Checkpoint(_) => {
                CliError::new(EXIT_INCONSISTENT, "inconsistent_input", message)
            }
            _ => CliError::new(EXIT_RUNTIME, "runtime", message),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "aspre", version, about = "Aspect-sentiment pair mining and explainable rating prediction")]
pub struct Cli {
    /// Log progress at info level (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics (and pair statistics when the pairs file exists).
    Stats(Common),
    /// Induce the PMI term set and fuse it with the lexicon and NN lists.
    ExtractTerms(Common),
    /// Extract, merge and filter aspect-sentiment pairs from dependency parses.
    ExtractPairs(Common),
    /// Write a deterministic stand-in embedding store for the corpus.
    PseudoEmbed(Common),
    /// Train a model and write the checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Test-split MSE of a checkpoint against the bias-only baseline.
    Eval(Common),
    /// Predictions for the test split, or for one pair.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "item")]
        user: Option<String>,
        #[arg(long, requires = "user")]
        item: Option<String>,
    },
    /// Aspect-level explanation of one prediction.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        /// json or markdown.
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Rank/frequency table of pairs and its log-log Spearman correlation.
    Zipf(Common),
    /// Grid of training runs over the configured hyperparameter lists.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Validate the configuration and inputs without writing anything.
    #[arg(long)]
    pub dry_run: bool,
    /// Overrides ASPRE_SEED and the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// FULL, WITHOUT_EXPLICIT or WITHOUT_IMPLICIT.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub max_reviews_per_side: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// CoNLL-U parses of the corpus.
    pub parses: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub lexicon_positive: Option<PathBuf>,
    pub lexicon_negative: Option<PathBuf>,
    pub nn_terms: Option<PathBuf>,
    pub synsets: Option<PathBuf>,
    /// Fused term set (JSONL), written by extract-terms.
    pub terms: Option<PathBuf>,
    /// Pair file (JSONL), written by extract-pairs.
    pub pairs: Option<PathBuf>,
    /// Embedding store directory.
    pub embeddings: Option<PathBuf>,
    /// Checkpoint; defaults to `<out_dir>/model.aprm`.
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            parses: None,
            seeds: None,
            lexicon_positive: None,
            lexicon_negative: None,
            nn_terms: None,
            synsets: None,
            terms: None,
            pairs: None,
            embeddings: None,
            model: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub min_reviews: usize,
    pub min_words: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            min_reviews: 1,
            min_words: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermSection {
    pub window_size: usize,
    pub q: usize,
    pub smoothing: bool,
}

impl Default for TermSection {
    fn default() -> Self {
        TermSection {
            window_size: 5,
            q: 400,
            smoothing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSection {
    /// Aspects need strictly more than this many candidates.
    pub min_frequency: u64,
    pub item_pronouns: Vec<String>,
}

impl Default for PairSection {
    fn default() -> Self {
        PairSection {
            min_frequency: 0,
            item_pronouns: DEFAULT_ITEM_PRONOUNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    pub dim: usize,
    /// Longer reviews are cut to this many subtokens.
    pub max_subtokens: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection {
            dim: crate::embed::DEFAULT_DIM,
            max_subtokens: crate::embed::DEFAULT_MAX_SUBTOKENS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the split, training, and the stand-in embeddings.
    pub seed: u64,
    pub paths: Paths,
    pub filter: FilterSection,
    pub sentiterm: TermSection,
    pub aspair: PairSection,
    pub embed: EmbedSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
}

impl RunConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::missing(path, "config")
            } else {
                CliError::from(Error::Io { path: path.to_owned(), source: e })
            }
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError { path: Some(path.to_owned()), ..CliError::schema(format!("{}: {e}", path.display())) })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.corpus,
            &mut p.parses,
            &mut p.seeds,
            &mut p.lexicon_positive,
            &mut p.lexicon_negative,
            &mut p.nn_terms,
            &mut p.synsets,
            &mut p.terms,
            &mut p.pairs,
            &mut p.embeddings,
            &mut p.model,
        ]
        .into_iter()
        .flatten()
        {
            if slot.is_relative() {
                *slot = base.join(&*slot);
            }
        }
        if p.out_dir.is_relative() {
            p.out_dir = base.join(&p.out_dir);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().map_err(|e| CliError::schema(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::schema(e.to_string()))?;
        if self.sentiterm.window_size < 2 {
            return Err(CliError::schema("sentiterm.window_size must be at least 2"));
        }
        if self.embed.dim == 0 {
            return Err(CliError::schema("embed.dim must be at least 1"));
        }
        if self.paths.lexicon_positive.is_some() != self.paths.lexicon_negative.is_some() {
            return Err(CliError::schema("lexicon_positive and lexicon_negative must be given together"));
        }
        Ok(())
    }

    fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.paths.out_dir.join("model.aprm"))
    }
}

/// Flag, then environment, then config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::schema(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(config),
    }
}

fn apply_train_flags(cfg: &mut TrainConfig, flags: &TrainFlags) {
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = flags.patience {
        cfg.patience = v;
    }
    if let Some(v) = flags.variant {
        cfg.variant = v;
    }
    if let Some(v) = flags.max_reviews_per_side {
        cfg.max_reviews_per_side = v;
    }
}

/// Loads the config named by `common` and applies every override.
pub fn effective_config(common: &Common, flags: Option<&TrainFlags>, env_seed: Option<&str>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.seed = resolve_seed(common.seed, env_seed, cfg.seed)?;
    cfg.train.seed = cfg.seed;
    if let Some(d) = &common.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    if let Some(c) = &common.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    if let Some(f) = flags {
        apply_train_flags(&mut cfg.train, f);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::schema(format!("paths.{key} is required for this command")))?;
    if !p.exists() {
        return Err(CliError::missing(p, key));
    }
    Ok(p)
}

fn optional<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<Option<&'a Path>> {
    match path.as_deref() {
        Some(p) if !p.exists() => Err(CliError::missing(p, key)),
        other => Ok(other),
    }
}

fn output<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::schema(format!("paths.{key} is required for this command")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
    Ok(path.to_owned())
}

fn pretty(value: &impl Serialize) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

fn corpus_of(cfg: &RunConfig) -> CliResult<Corpus> {
    let path = require(&cfg.paths.corpus, "corpus")?;
    let corpus = load_corpus(path)?;
    Ok(filter_corpus(&corpus, cfg.filter.min_reviews, cfg.filter.min_words))
}

/// Inputs each command reads; checked before any work, including on dry runs.
fn check_inputs(command: &Command, cfg: &RunConfig) -> CliResult<()> {
    let p = &cfg.paths;
    match command {
        Command::Stats(_) => {
            require(&p.corpus, "corpus")?;
        }
        Command::ExtractTerms(_) => {
            require(&p.parses, "parses")?;
            require(&p.seeds, "seeds")?;
            optional(&p.lexicon_positive, "lexicon_positive")?;
            optional(&p.lexicon_negative, "lexicon_negative")?;
            optional(&p.nn_terms, "nn_terms")?;
            output(&p.terms, "terms")?;
        }
        Command::ExtractPairs(_) => {
            require(&p.corpus, "corpus")?;
            require(&p.parses, "parses")?;
            require(&p.terms, "terms")?;
            optional(&p.synsets, "synsets")?;
            output(&p.pairs, "pairs")?;
        }
        Command::PseudoEmbed(_) => {
            require(&p.corpus, "corpus")?;
            output(&p.embeddings, "embeddings")?;
        }
        Command::Train { .. } | Command::Sweep { .. } => {
            require(&p.corpus, "corpus")?;
            require(&p.pairs, "pairs")?;
            require(&p.embeddings, "embeddings")?;
        }
        Command::Eval(_) | Command::Predict { .. } | Command::Explain { .. } => {
            require(&p.corpus, "corpus")?;
            require(&p.pairs, "pairs")?;
            require(&p.embeddings, "embeddings")?;
            let model = cfg.model_path();
            if !model.exists() {
                return Err(CliError::missing(&model, "model"));
            }
        }
        Command::Zipf(_) => {
            require(&p.pairs, "pairs")?;
        }
    }
    if let Command::Explain { format, .. } = command {
        format.parse::<Format>().map_err(|e| CliError::schema(e.to_string()))?;
    }
    Ok(())
}

fn common_of(command: &Command) -> (&Common, Option<&TrainFlags>) {
    match command {
        Command::Stats(c)
        | Command::ExtractTerms(c)
        | Command::ExtractPairs(c)
        | Command::PseudoEmbed(c)
        | Command::Eval(c)
        | Command::Zipf(c) => (c, None),
        Command::Train { common, flags } | Command::Sweep { common, flags } => (common, Some(flags)),
        Command::Predict { common, .. } | Command::Explain { common, .. } => (common, None),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Stats(_) => "stats",
        Command::ExtractTerms(_) => "extract-terms",
        Command::ExtractPairs(_) => "extract-pairs",
        Command::PseudoEmbed(_) => "pseudo-embed",
        Command::Train { .. } => "train",
        Command::Eval(_) => "eval",
        Command::Predict { .. } => "predict",
        Command::Explain { .. } => "explain",
        Command::Zipf(_) => "zipf",
        Command::Sweep { .. } => "sweep",
    }
}

/// What a successful command did; printed as one JSON line on stdout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub command: &'static str,
    pub dry_run: bool,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

fn training_data(cfg: &RunConfig) -> CliResult<(TrainingData, EmbeddingStore)> {
    let corpus = corpus_of(cfg)?;
    let pairs = load_pairs_jsonl(require(&cfg.paths.pairs, "pairs")?)?;
    let vocabulary = vocabulary_from_pairs(&pairs).map_err(|e| CliError::schema(e.to_string()))?;
    let store = EmbeddingStore::open(require(&cfg.paths.embeddings, "embeddings")?)?;
    if let Some(d) = store.dim() {
        if d != cfg.model.embed_dim {
            return Err(CliError::new(
                EXIT_INCONSISTENT,
                "inconsistent_input",
                format!("embedding width {d} differs from model.embed_dim {}", cfg.model.embed_dim),
            ));
        }
    }
    let split = split_corpus(&corpus, cfg.seed)?;
    let data = TrainingData::build(corpus, &split, &pairs, vocabulary, &store)?;
    Ok((data, store))
}

fn load_model(cfg: &RunConfig, data: &TrainingData) -> CliResult<Apre> {
    let (model, _) = Apre::load(cfg.model_path())?;
    let names: Vec<&str> = data.aspects.aspects.iter().map(|(a, _)| a.as_str()).collect();
    if model.aspects().iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(CliError::new(
            EXIT_INCONSISTENT,
            "inconsistent_input",
            "checkpoint aspects differ from the pair file's aspects",
        ));
    }
    Ok(model)
}

/// A trained model with the reviews, pairs and histories it scores against,
/// loaded once from a run configuration and queried per (user, item).
pub struct Session {
    pub config: RunConfig,
    pub data: TrainingData,
    pub model: Apre,
    pub pairs: Vec<ASPair>,
}

impl Session {
    /// Loads corpus, pairs, embeddings and the checkpoint named by `config`.
    pub fn open(config: RunConfig) -> CliResult<Self> {
        config.validate()?;
        let (data, _store) = training_data(&config)?;
        let model = load_model(&config, &data)?;
        let pairs = load_pairs_jsonl(require(&config.paths.pairs, "pairs")?)?;
        Ok(Session {
            config,
            data,
            model,
            pairs,
        })
    }

    fn histories(&self, user: &str, item: &str) -> (Vec<&ReviewFeatures>, Vec<&ReviewFeatures>) {
        let cap = self.config.train.max_reviews_per_side;
        (self.data.history(true, user, None, cap), self.data.history(false, item, None, cap))
    }

    pub fn predict(&self, user: &str, item: &str) -> crate::Result<Prediction> {
        let (ur, ir) = self.histories(user, item);
        self.model.predict(user, item, &ur, &ir)
    }

    pub fn explain(&self, user: &str, item: &str) -> crate::Result<ExplanationReport> {
        let (ur, ir) = self.histories(user, item);
        explain(&self.model, user, item, &ur, &ir, &self.pairs)
    }
}

pub fn execute(command: &Command, env_seed: Option<&str>) -> CliResult<Outcome> {
    let (common, flags) = common_of(command);
    let cfg = effective_config(common, flags, env_seed)?;
    check_inputs(command, &cfg)?;
    let name = command_name(command);
    if common.dry_run {
        return Ok(Outcome {
            command: name,
            dry_run: true,
            outputs: vec![],
            summary: json!({"seed": cfg.seed}),
        });
    }
    let out = &cfg.paths.out_dir;
    let mut outputs = Vec::new();
    let summary = match command {
        Command::Stats(_) => {
            let corpus = corpus_of(&cfg)?;
            let mut report = json!({"corpus": corpus_stats(&corpus)});
            if let Some(p) = optional(&cfg.paths.pairs, "pairs")? {
                report["pairs"] = serde_json::to_value(aspair_stats(&load_pairs_jsonl(p)?, &corpus)).map_err(Error::from)?;
            }
            outputs.push(write_file(&out.join("stats.json"), pretty(&report)?)?);
            report
        }
        Command::ExtractTerms(_) => {
            let parses = load_conllu(require(&cfg.paths.parses, "parses")?)?;
            let seeds = SeedSet::load(require(&cfg.paths.seeds, "seeds")?)?;
            let counts = count_contexts(parses.values(), cfg.sentiterm.window_size)?;
            let candidates = candidate_terms(parses.values());
            let opts = PmiOptions {
                smoothing: cfg.sentiterm.smoothing,
            };
            let pmi = pmi_terms(&counts, &candidates, &seeds, cfg.sentiterm.q, opts);
            let mut sets: Vec<SentimentTermSet> = vec![pmi];
            if let (Some(pos), Some(neg)) = (&cfg.paths.lexicon_positive, &cfg.paths.lexicon_negative) {
                sets.push(load_lexicon(pos, neg)?);
            }
            if let Some(nn) = optional(&cfg.paths.nn_terms, "nn_terms")? {
                sets.push(load_nn_terms(nn)?);
            }
            let fused = fuse(&sets.iter().collect::<Vec<_>>());
            let path = output(&cfg.paths.terms, "terms")?;
            outputs.push(write_file(path, fused.to_jsonl())?);
            let regions: BTreeMap<String, usize> = fused
                .venn_regions()
                .into_iter()
                .map(|(k, v)| (format!("{k:?}").to_lowercase(), v))
                .collect();
            json!({"terms": fused.len(), "pmi_terms": sets[0].len(), "regions": regions})
        }
        Command::ExtractPairs(_) => {
            let corpus = corpus_of(&cfg)?;
            let parses = load_conllu(require(&cfg.paths.parses, "parses")?)?;
            let terms = SentimentTermSet::load_jsonl(require(&cfg.paths.terms, "terms")?)?;
            let opts = ExtractOptions {
                item_pronouns: cfg.aspair.item_pronouns.clone(),
            };
            let mut candidates: Vec<_> = parses
                .values()
                .filter(|r| corpus.get(&r.review_id).is_some())
                .flat_map(|r| extract_candidates(r, &opts))
                .collect();
            if let Some(s) = optional(&cfg.paths.synsets, "synsets")? {
                candidates = merge_synonym_aspects(&candidates, &SynsetTable::load(s)?);
            }
            let (pairs, vocabulary) = filter_pairs(&candidates, &terms, cfg.aspair.min_frequency);
            let before = pairs.len();
            let mut pairs = resolve_word_positions(pairs, &parses, &corpus);
            let vocabulary = compact_aspect_ids(&mut pairs, &vocabulary);
            let path = output(&cfg.paths.pairs, "pairs")?;
            outputs.push(write_file(path, write_pairs_jsonl(&pairs))?);
            json!({
                "candidates": candidates.len(),
                "pairs": pairs.len(),
                "unanchored": before - pairs.len(),
                "aspects": vocabulary.len(),
                "stats": aspair_stats(&pairs, &corpus),
            })
        }
        Command::PseudoEmbed(_) => {
            let corpus = corpus_of(&cfg)?;
            let mut truncated = 0usize;
            let reviews = corpus
                .records()
                .iter()
                .map(|r| {
                    let mut e = pseudo_embed(&r.review_id, &r.text, cfg.embed.dim, cfg.seed)?;
                    truncated += usize::from(truncate(&mut e, cfg.embed.max_subtokens));
                    Ok(e)
                })
                .collect::<crate::Result<Vec<_>>>()?;
            let dir = output(&cfg.paths.embeddings, "embeddings")?;
            write_store(dir, &reviews)?;
            outputs.push(dir.to_owned());
            json!({"reviews": reviews.len(), "dim": cfg.embed.dim, "truncated": truncated})
        }
        Command::Train { .. } => {
            let (data, _store) = training_data(&cfg)?;
            info!("training on {} reviews, {} aspects", data.train.len(), data.aspects.len());
            let result = train(&data, &cfg.model, &cfg.train)?;
            let model_path = cfg.model_path();
            if let Some(dir) = model_path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_owned(), source: e })?;
            }
            result.model.save(&model_path, Some(&result.optimizer))?;
            outputs.push(model_path);
            outputs.push(write_file(&out.join("metrics.csv"), result.log.to_csv())?);
            let test = evaluate(&result.model, &data, &data.test, cfg.train.max_reviews_per_side)?;
            let summary = json!({
                "variant": cfg.train.variant,
                "epochs_run": result.log.epochs.len(),
                "best_epoch": result.best_epoch,
                "best_val_mse": result.best_val_mse,
                "test": test,
            });
            outputs.push(write_file(&out.join("train_summary.json"), pretty(&summary)?)?);
            summary
        }
        Command::Eval(_) => {
            let (data, _store) = training_data(&cfg)?;
            let model = load_model(&cfg, &data)?;
            let test = evaluate(&model, &data, &data.test, cfg.train.max_reviews_per_side)?;
            let baseline = BiasBaseline::fit(&data, 200, 1e-10).mse(&data, &data.test)?;
            let report = json!({"test": test, "bias_only_mse": baseline});
            outputs.push(write_file(&out.join("eval.json"), pretty(&report)?)?);
            report
        }
        Command::Predict { user, item, .. } => {
            let session = Session::open(cfg.clone())?;
            let rows = match (user, item) {
                (Some(u), Some(t)) => {
                    let p = session.predict(u, t)?;
                    vec![crate::trainer::PredictionRow {
                        user_id: u.clone(),
                        item_id: t.clone(),
                        s_hat: p.s_hat,
                        cold_start_flags: crate::trainer::ColdStartFlags {
                            user: p.cold_user,
                            item: p.cold_item,
                        },
                    }]
                }
                _ => predict_positions(
                    &session.model,
                    &session.data,
                    &session.data.test,
                    cfg.train.max_reviews_per_side,
                )?,
            };
            let mut text = String::new();
            for r in &rows {
                text.push_str(&serde_json::to_string(r).map_err(Error::from)?);
                text.push('\n');
            }
            outputs.push(write_file(&out.join("predictions.jsonl"), text)?);
            json!({"predictions": rows.len()})
        }
        Command::Explain { user, item, format, .. } => {
            let format: Format = format.parse().map_err(|e: Error| CliError::schema(e.to_string()))?;
            let report = Session::open(cfg.clone())?.explain(user, item)?;
            let ext = match format {
                Format::Json => "json",
                Format::Markdown => "md",
            };
            outputs.push(write_file(&out.join(format!("explanation.{ext}")), render(&report, format)?)?);
            json!({"s_hat": report.s_hat, "aspects": report.aspects.len(), "cold_user": report.cold_user, "cold_item": report.cold_item})
        }
        Command::Zipf(_) => {
            let pairs = load_pairs_jsonl(require(&cfg.paths.pairs, "pairs")?)?;
            let rows = zipf_report(&pairs)?;
            let rho = zipf_spearman(&rows);
            let mut csv = String::from("rank,frequency,aspect,sentiment\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{}\n", r.rank, r.frequency, r.aspect, r.sentiment));
            }
            outputs.push(write_file(&out.join("zipf.csv"), csv)?);
            let summary = json!({"distinct_pairs": rows.len(), "spearman_log_rank_log_frequency": rho});
            outputs.push(write_file(&out.join("zipf.json"), pretty(&summary)?)?);
            summary
        }
        Command::Sweep { .. } => {
            let (data, _store) = training_data(&cfg)?;
            let rows = sweep(&data, &cfg.model, &cfg.train, &cfg.sweep)?;
            outputs.push(write_file(&out.join("sweep.csv"), sweep_csv(&rows))?);
            json!({"settings": rows.len()})
        }
    };
    Ok(Outcome {
        command: name,
        dry_run: false,
        outputs,
        summary,
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let err = CliError::new(EXIT_USAGE, "usage", e.kind().to_string());
            eprint!("{}", e.render());
            eprintln!("{}", err.to_json_line());
            return EXIT_USAGE;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli.command, env_seed) {
        Ok(outcome) => {
            println!("{}", json!({"status": "ok", "command": outcome.command, "dry_run": outcome.dry_run, "outputs": outcome.outputs, "summary": outcome.summary}));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.code
        }
    }
}
