//! The `lexforge` command line. Every command reads explicit inputs and
//! writes only under the output directory.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lexforge_core::data::{build_dataset, render_train, tokenize_example, DataError};
use lexforge_core::eval::{run_eval, EvalTask};
use lexforge_core::generate::{encode_prompt, generate, GenerateError, Model};
use lexforge_core::tokenizer::train_bpe;
use lexforge_core::train::{mean_masked_loss, run_stage, SpecialIds, StageReport, TrainData, TrainError};
use lexforge_core::{Checkpoint, ModelParameters, Stage, Subset, TokenSequence, Vocabulary};
use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{self, DatasetFileError};
use crate::{augment, fixtures, report, toy, vocab_io};

#[derive(Debug, Parser)]
#[command(name = "lexforge", version, about = "Two-stage LoRA adaptation of a small legal-domain language model")]
pub struct Cli {
    /// TOML pipeline configuration; flags override it.
    #[arg(long, global = true, env = "LEXFORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory that receives every output file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset construction and augmentation.
    #[command(subcommand)]
    Data(DataCmd),
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Pre-training (`lpt`) or instruction fine-tuning (`lft`).
    #[command(subcommand)]
    Train(TrainCmd),
    /// Folds a checkpoint's adapters into its weights.
    Merge {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Answers one instruction.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        instruction: String,
    },
    /// Answers one instruction per stdin line.
    Chat {
        #[command(flatten)]
        model: ModelArgs,
        /// Print `{"instruction","response","token_count"}` objects.
        #[arg(long)]
        json: bool,
    },
    /// Scores a checkpoint on the evaluation tasks.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory of task files; the bundled tasks are used otherwise.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value = "lexforge")]
        model_name: String,
    },
    /// Merges report files into one comparison table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Models among which the best score per column is bolded.
        #[arg(long, num_args = 1..)]
        open_source: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Validates, deduplicates and concatenates record files.
    Build {
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Writes refinement prompts for the subset (a) and (b) records.
    AugmentPrompts {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Turns chat-model replies into subset (c) records.
    IngestAugmented {
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Writes the synthetic toy corpus and instruction set.
    Toy {
        #[arg(long, default_value_t = 200_000)]
        corpus_bytes: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Records whose rendered training texts join the corpus.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    Lpt {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Base-stage checkpoint; a fresh model is initialized otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    Lft {
        #[arg(long)]
        from_lpt: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("stage order: {0}")]
    StageOrder(String),
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::StageOrder(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DatasetFileError> for CliError {
    fn from(e: DatasetFileError) -> Self {
        match e {
            DatasetFileError::Invalid { .. } => CliError::Validation(e.to_string()),
            DatasetFileError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<vocab_io::VocabFileError> for CliError {
    fn from(e: vocab_io::VocabFileError) -> Self {
        match e {
            vocab_io::VocabFileError::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::StagePrecondition { .. } | TrainError::UntrainableStage(_) => {
                CliError::StageOrder(e.to_string())
            }
            TrainError::NoData | TrainError::DocumentsForFineTuning => CliError::Validation(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        CliError::Other(e.to_string())
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

/// Flag value, then config value, then a missing-input error naming the flag.
fn input(flag: &str, given: &Option<PathBuf>, configured: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let path = given
        .clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::MissingInput(format!("--{flag} is required")))?;
    if !path.exists() {
        return Err(CliError::MissingInput(format!("--{flag}: {} does not exist", path.display())));
    }
    Ok(path)
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(d) = &cli.out_dir {
            cfg.out_dir = d.clone();
        }
        let out = cfg.out_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| other(format!("cannot create {}: {e}", out.display())))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| other(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(other)?;
        text.push('\n');
        self.write(name, text)
    }

    fn vocab(&self, given: &Option<PathBuf>) -> Result<Vocabulary, CliError> {
        Ok(vocab_io::load(&input("vocab", given, &self.cfg.paths.vocab)?)?)
    }

    fn checkpoint(&self, given: &Option<PathBuf>) -> Result<Checkpoint, CliError> {
        Ok(checkpoint::load(&input("checkpoint", given, &self.cfg.paths.checkpoint)?)?)
    }
}

#[derive(Serialize)]
struct StageReportFile<'a> {
    stage: String,
    seed: u64,
    sequences: usize,
    dropped: usize,
    steps: u64,
    step_losses: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    final_masked_loss: Option<f64>,
}

impl<'a> StageReportFile<'a> {
    fn new(stage: Stage, seed: u64, r: &'a StageReport) -> Self {
        Self {
            stage: stage.to_string(),
            seed,
            sequences: r.sequences,
            dropped: r.dropped,
            steps: r.steps,
            step_losses: &r.step_losses,
            final_masked_loss: None,
        }
    }
}

#[derive(Serialize)]
struct DatasetReportFile {
    total: usize,
    counts: std::collections::BTreeMap<&'static str, usize>,
    proportions: std::collections::BTreeMap<&'static str, f64>,
    rejected: usize,
    duplicates: usize,
}

#[derive(Serialize)]
struct ChatLine<'a> {
    instruction: &'a str,
    response: &'a str,
    token_count: usize,
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    task: String,
    index: usize,
    instruction: &'a str,
    reference: &'a str,
    prediction: &'a str,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::Data(cmd) => data(&ctx, cmd),
        Command::Tokenizer(TokenizerCmd::Train {
            corpus,
            dataset,
            vocab_size,
        }) => tokenizer_train(&ctx, corpus, dataset, *vocab_size),
        Command::Train(TrainCmd::Lpt { corpus, vocab, init }) => train_lpt(&ctx, corpus, vocab, init),
        Command::Train(TrainCmd::Lft {
            from_lpt,
            dataset,
            vocab,
        }) => train_lft(&ctx, from_lpt, dataset, vocab),
        Command::Merge { checkpoint } => merge(&ctx, checkpoint),
        Command::Generate { model, instruction } => {
            let (ckpt, vocab, gen) = load_model(&ctx, model)?;
            let (response, _) = respond(&ckpt, &vocab, instruction, &gen)?;
            println!("{response}");
            Ok(())
        }
        Command::Chat { model, json } => chat(&ctx, model, *json),
        Command::Eval {
            model,
            fixtures,
            model_name,
        } => eval(&ctx, model, fixtures, model_name),
        Command::Report { input, open_source } => report_cmd(&ctx, input, open_source),
    }
}

fn data(ctx: &Ctx, cmd: &DataCmd) -> Result<(), CliError> {
    match cmd {
        DataCmd::Build { input: inputs } => {
            if inputs.is_empty() {
                return Err(CliError::MissingInput("--input is required".into()));
            }
            let mut all = Vec::new();
            for p in inputs {
                let p = input("input", &Some(p.clone()), &None)?;
                all.extend(dataset::read_records(&p)?);
            }
            let built = build_dataset(all).map_err(|e| CliError::Validation(e.to_string()))?;
            let r = &built.report;
            if r.rejected > 0 || r.duplicates > 0 {
                log::warn!("rejected {} invalid and {} duplicate records", r.rejected, r.duplicates);
            }
            let subsets = [Subset::A, Subset::B, Subset::C];
            let file = DatasetReportFile {
                total: r.total(),
                counts: subsets.iter().map(|&s| (s.as_str(), r.count(s))).collect(),
                proportions: subsets.iter().map(|&s| (s.as_str(), r.proportion(s))).collect(),
                rejected: r.rejected,
                duplicates: r.duplicates,
            };
            dataset::write_records(&ctx.path("dataset.jsonl"), &built.records)?;
            ctx.write_json("dataset_report.json", &file)?;
            log::info!(
                "dataset: {} records (a {}, b {}, c {})",
                r.total(),
                r.count(Subset::A),
                r.count(Subset::B),
                r.count(Subset::C)
            );
            Ok(())
        }
        DataCmd::AugmentPrompts { dataset: path } => {
            let path = input("dataset", path, &ctx.cfg.paths.dataset)?;
            let records: Vec<_> = dataset::read_records(&path)?
                .into_iter()
                .filter(|r| r.subset != Subset::C)
                .collect();
            let batch = augment::prompt_batch(&records).map_err(|e| CliError::Validation(e.to_string()))?;
            ctx.write("augment_prompts.txt", batch)?;
            log::info!("{} prompts", records.len());
            Ok(())
        }
        DataCmd::IngestAugmented { responses } => {
            let path = input("responses", responses, &None)?;
            let text = std::fs::read_to_string(&path).map_err(other)?;
            let ingest = augment::ingest_responses(&text);
            for (line, e) in &ingest.failures {
                log::warn!("{}:{line}: {e}", path.display());
            }
            if ingest.records.is_empty() {
                return Err(CliError::Validation(format!(
                    "no usable replies in {} ({} failures)",
                    path.display(),
                    ingest.failures.len()
                )));
            }
            dataset::write_records(&ctx.path("augmented.jsonl"), &ingest.records)?;
            log::info!("{} records, {} failures", ingest.records.len(), ingest.failures.len());
            Ok(())
        }
        DataCmd::Toy { corpus_bytes } => {
            let docs = toy::corpus(ctx.cfg.seed, *corpus_bytes);
            let mut text = docs.join("\n");
            text.push('\n');
            ctx.write("corpus.txt", text)?;
            dataset::write_records(&ctx.path("instructions.jsonl"), &toy::instructions())?;
            Ok(())
        }
    }
}

fn tokenizer_train(
    ctx: &Ctx,
    corpus: &Option<PathBuf>,
    dataset_path: &Option<PathBuf>,
    vocab_size: Option<usize>,
) -> Result<(), CliError> {
    let corpus = input("corpus", corpus, &ctx.cfg.paths.corpus)?;
    let mut texts = dataset::read_corpus(&corpus)?;
    if let Some(p) = dataset_path {
        let p = input("dataset", &Some(p.clone()), &None)?;
        for r in dataset::read_records(&p)? {
            let rendered = render_train(&r.instruction, &r.output).map_err(|e| CliError::Validation(e.to_string()))?;
            texts.push(rendered.text);
        }
    }
    let size = vocab_size.unwrap_or(ctx.cfg.tokenizer.vocab_size);
    let vocab = train_bpe(&texts, size).map_err(|e| CliError::Validation(e.to_string()))?;
    let path = ctx.path("vocab.txt");
    vocab_io::save(&vocab, &path)?;
    log::info!("wrote {} ({} tokens)", path.display(), vocab.size());
    Ok(())
}

fn train_lpt(
    ctx: &Ctx,
    corpus: &Option<PathBuf>,
    vocab: &Option<PathBuf>,
    init: &Option<PathBuf>,
) -> Result<(), CliError> {
    let corpus = input("corpus", corpus, &ctx.cfg.paths.corpus)?;
    let vocab = ctx.vocab(vocab)?;
    let base = match init {
        Some(p) => {
            let ckpt = checkpoint::load(&input("init", &Some(p.clone()), &None)?)?;
            if ckpt.stage != Stage::Base || ckpt.adapters.is_some() {
                return Err(CliError::StageOrder(format!(
                    "--init must be a base checkpoint, got stage {}",
                    ckpt.stage
                )));
            }
            ckpt.params
        }
        None => ModelParameters::init(ctx.cfg.transformer(vocab.size()), ctx.cfg.seed).map_err(other)?,
    };
    if base.config().vocab_size != vocab.size() {
        return Err(CliError::Validation(format!(
            "model vocabulary {} does not match tokenizer vocabulary {}",
            base.config().vocab_size,
            vocab.size()
        )));
    }
    let docs: Vec<TokenSequence> = dataset::read_corpus(&corpus)?.iter().map(|d| vocab.encode(d)).collect();
    let config = ctx.cfg.train(Stage::Lpt);
    log::info!("pre-training on {} documents", docs.len());
    let (ckpt, report) = run_stage(&config, TrainData::Documents(docs), &base, SpecialIds::of(&vocab))?;
    log_stage(&report);
    checkpoint::save(&ckpt, &ctx.path("lpt.ckpt"))?;
    ctx.write_json("lpt_report.json", &StageReportFile::new(Stage::Lpt, config.seed, &report))?;
    Ok(())
}

fn train_lft(
    ctx: &Ctx,
    from_lpt: &Option<PathBuf>,
    dataset_path: &Option<PathBuf>,
    vocab: &Option<PathBuf>,
) -> Result<(), CliError> {
    let lpt_path = from_lpt
        .clone()
        .or_else(|| ctx.cfg.paths.lpt_checkpoint.clone())
        .ok_or_else(|| CliError::StageOrder("fine-tuning needs a pre-trained checkpoint (--from-lpt)".into()))?;
    let lpt_path = input("from-lpt", &Some(lpt_path), &None)?;
    let ckpt = checkpoint::load(&lpt_path)?;
    if ckpt.stage != Stage::Lpt {
        return Err(CliError::StageOrder(format!(
            "--from-lpt must be a pre-training checkpoint, got stage {}",
            ckpt.stage
        )));
    }
    let init = ckpt.merged().map_err(other)?.params;
    let dataset_path = input("dataset", dataset_path, &ctx.cfg.paths.dataset)?;
    let vocab = ctx.vocab(vocab)?;
    if init.config().vocab_size != vocab.size() {
        return Err(CliError::Validation(format!(
            "checkpoint vocabulary {} does not match tokenizer vocabulary {}",
            init.config().vocab_size,
            vocab.size()
        )));
    }
    let records = dataset::read_records(&dataset_path)?;
    let mut examples = Vec::with_capacity(records.len());
    for (n, r) in records.iter().enumerate() {
        // Over-long examples are dropped and counted by the trainer.
        let ex = tokenize_example(r, &vocab, usize::MAX)
            .map_err(|e: DataError| CliError::Validation(format!("record {}: {e}", n + 1)))?;
        examples.push(ex);
    }
    let config = ctx.cfg.train(Stage::Lft);
    log::info!("fine-tuning on {} examples", examples.len());
    let (out, report) = run_stage(&config, TrainData::Examples(examples.clone()), &init, SpecialIds::of(&vocab))?;
    log_stage(&report);
    let context = init.config().context_length;
    examples.retain(|e| e.tokens.len() <= context);
    let final_loss = mean_masked_loss(&out.params, out.adapters.as_ref(), &examples)?;
    log::info!("final masked loss {final_loss:.4}");
    checkpoint::save(&out, &ctx.path("lft.ckpt"))?;
    let mut file = StageReportFile::new(Stage::Lft, config.seed, &report);
    file.final_masked_loss = Some(final_loss);
    ctx.write_json("lft_report.json", &file)?;
    Ok(())
}

fn log_stage(r: &StageReport) {
    let first = r.step_losses.first().copied().unwrap_or(f64::NAN);
    let last = r.step_losses.last().copied().unwrap_or(f64::NAN);
    log::info!(
        "{} sequences ({} dropped), {} steps, loss {first:.4} -> {last:.4}",
        r.sequences,
        r.dropped,
        r.steps
    );
}

fn merge(ctx: &Ctx, given: &Option<PathBuf>) -> Result<(), CliError> {
    let path = input("checkpoint", given, &ctx.cfg.paths.checkpoint)?;
    let ckpt = checkpoint::load(&path)?;
    let merged = ckpt.merged().map_err(other)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let out = ctx.path(&format!("{stem}-merged.ckpt"));
    checkpoint::save(&merged, &out)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn load_model(
    ctx: &Ctx,
    args: &ModelArgs,
) -> Result<(Checkpoint, Vocabulary, lexforge_core::GenerationParams), CliError> {
    let ckpt = ctx.checkpoint(&args.checkpoint)?;
    let vocab = ctx.vocab(&args.vocab)?;
    if ckpt.params.config().vocab_size != vocab.size() {
        return Err(CliError::Validation(format!(
            "checkpoint vocabulary {} does not match tokenizer vocabulary {}",
            ckpt.params.config().vocab_size,
            vocab.size()
        )));
    }
    let mut gen = ctx.cfg.generation()?;
    if let Some(n) = args.max_new_tokens {
        gen.max_new_tokens = n;
    }
    Ok((ckpt, vocab, gen))
}

/// The decoded response and the number of generated tokens.
fn respond(
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    instruction: &str,
    gen: &lexforge_core::GenerationParams,
) -> Result<(String, usize), CliError> {
    let prompt = encode_prompt(vocab, instruction)?;
    let out = generate(Model::from(ckpt), &prompt, gen, SpecialIds::of(vocab))?;
    let text = vocab.decode(&out).map_err(other)?;
    Ok((text, out.len()))
}

fn chat(ctx: &Ctx, args: &ModelArgs, json: bool) -> Result<(), CliError> {
    let (ckpt, vocab, gen) = load_model(ctx, args)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(other)?;
        let instruction = line.trim();
        if instruction.is_empty() {
            continue;
        }
        let (response, token_count) = respond(&ckpt, &vocab, instruction, &gen)?;
        if json {
            let obj = ChatLine {
                instruction,
                response: &response,
                token_count,
            };
            writeln!(stdout, "{}", serde_json::to_string(&obj).map_err(other)?).map_err(other)?;
        } else {
            writeln!(stdout, "{response}").map_err(other)?;
        }
        stdout.flush().map_err(other)?;
    }
    Ok(())
}

fn eval(ctx: &Ctx, args: &ModelArgs, fixture_dir: &Option<PathBuf>, name: &str) -> Result<(), CliError> {
    let (ckpt, vocab, gen) = load_model(ctx, args)?;
    let tasks: Vec<EvalTask> = match fixture_dir.clone().or_else(|| ctx.cfg.paths.fixtures.clone()) {
        Some(dir) => fixtures::load_dir(&input("fixtures", &Some(dir), &None)?)?,
        None => fixtures::bundled(),
    };
    let outcome = run_eval(Model::from(&ckpt), &vocab, name, &tasks, &gen)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if outcome.failures > 0 {
        log::warn!("{} items failed to generate and scored zero", outcome.failures);
    }
    let mut predictions = String::new();
    for (task, preds) in tasks.iter().zip(&outcome.predictions) {
        for (i, (item, p)) in task.items.iter().zip(preds).enumerate() {
            let line = PredictionLine {
                task: task.id.to_string(),
                index: i,
                instruction: &item.instruction,
                reference: &item.reference,
                prediction: p,
            };
            predictions.push_str(&serde_json::to_string(&line).map_err(other)?);
            predictions.push('\n');
        }
    }
    let reports = [outcome.report];
    let table = report::comparison_text(&reports, &[]);
    ctx.write("report.txt", &table)?;
    ctx.write("report.jsonl", report::reports_to_jsonl(&reports))?;
    ctx.write("predictions.jsonl", predictions)?;
    print!("{table}");
    Ok(())
}

fn report_cmd(ctx: &Ctx, inputs: &[PathBuf], designated: &[String]) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for p in inputs {
        let p = input("input", &Some(p.clone()), &None)?;
        let text = std::fs::read_to_string(&p).map_err(other)?;
        reports.extend(report::parse_reports(&text)?);
    }
    for d in designated {
        if !reports.iter().any(|r| &r.model == d) {
            return Err(CliError::Validation(format!("--open-source names unknown model `{d}`")));
        }
    }
    let names: Vec<&str> = designated.iter().map(String::as_str).collect();
    let table = report::comparison_text(&reports, &names);
    ctx.write("comparison.txt", &table)?;
    print!("{table}");
    Ok(())
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
