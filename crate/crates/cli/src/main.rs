mod config;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use analogia::analogy::{HyperParams, LossVariant, RankMode};
use analogia::checks::{run_pipeline_suite, Precision};
use analogia::evaluation::{
    baseline_rank, evaluate, random_rank, rank_questions, rankings_to_tsv, sweep_prototypes,
    sweep_to_tsv, EvalOptions, Evaluation, GruEncoder,
};
use analogia::io::write_atomic;
use analogia::quadgen::{
    generate_eval_quadruples, generate_training_quadruples, quadruples_to_tsv,
    select_prototypes_for,
};
use analogia::seed;
use analogia::synthetic::{generate, SyntheticConfig};
use analogia::text::{load_embeddings_for, load_qa_dataset, EmbeddingTable, QADataset, WhType};
use analogia::training::{train, Checkpoint, CheckpointConfig, TrainConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn};

use config::Settings;

const EXIT_CODES: &str = "Exit status: 0 success, 1 usage error, 2 data or configuration error, \
                          3 gradient check failed.";

#[derive(Parser, Debug)]
#[command(name = "analogia", version, about = "Analogical answer selection", after_help = EXIT_CODES)]
struct Cli {
    /// Settings file of `key = value` lines (long flag names as keys).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed. Falls back to the config file, then ANALOGIA_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training or evaluation quadruples as TSV.
    GenQuadruples(GenQuadruples),
    /// Train an encoder and save a checkpoint directory.
    Train(Box<TrainArgs>),
    /// Rank every question's candidates with a trained encoder.
    Rank(RankArgs),
    /// Report MAP and MRR of a trained encoder.
    Eval(EvalArgs),
    /// Report MAP and MRR with averaged word vectors or random scores.
    Baseline(BaselineArgs),
    /// Report MAP and MRR for several prototype counts.
    SweepPrototypes(SweepArgs),
    /// Compare analytic and finite-difference gradients of the training loss.
    CheckGradients(CheckArgs),
    /// Write a small synthetic corpus with matching word vectors.
    GenSynthetic(SyntheticArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Question/candidate TSV: id, question, candidate, label.
    #[arg(long, value_name = "TSV")]
    data: PathBuf,

    /// Skip the first line of every data file.
    #[arg(long)]
    header: bool,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Prototypes per question type [default: 30]
    #[arg(long, value_name = "P")]
    prototypes: Option<usize>,

    /// Question types to use [default: who,when,where]
    #[arg(long, value_name = "LIST")]
    types: Option<TypeList>,
}

#[derive(Args, Debug)]
struct GenQuadruples {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    select: SelectArgs,

    /// Wrong answers sampled per correct answer [default: 1]
    #[arg(long)]
    negatives: Option<usize>,

    /// Unlabelled prototype × candidate quadruples instead of training ones.
    #[arg(long)]
    eval: bool,

    #[arg(long, value_name = "TSV")]
    out: PathBuf,

    /// Also write the chosen prototypes.
    #[arg(long, value_name = "TSV")]
    prototypes_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    select: SelectArgs,

    /// Word vectors, one `word v1 ... vn` per line.
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,

    /// Checkpoint directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// [default: 1]
    #[arg(long)]
    negatives: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    dropout: Option<f64>,
    /// [default: 0]
    #[arg(long, allow_negative_numbers = true)]
    margin: Option<f64>,
    /// hinge or literal [default: hinge]
    #[arg(long)]
    loss_variant: Option<LossVariant>,
    /// [default: 0]
    #[arg(long)]
    l2_lambda: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    cosine_epsilon: Option<f64>,
    /// Rescale gradients to at most this global norm.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Sentence vector size, twice the GRU hidden size [default: 300]
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,

    /// Word vectors [default: the file recorded at training time]
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankOptions {
    /// energy or dissimilarity [default: energy]
    #[arg(long)]
    mode: Option<RankMode>,

    /// Question types to rank [default: who,when,where]
    #[arg(long, value_name = "LIST")]
    types: Option<TypeList>,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    options: RankOptions,

    /// Output TSV [default: stdout]
    #[arg(long, value_name = "TSV")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    options: RankOptions,

    /// Also write the report here.
    #[arg(long, value_name = "TSV")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,

    /// Reuse this checkpoint's prototypes.
    #[arg(long, value_name = "DIR", conflicts_with_all = ["prototype_data", "prototypes"])]
    checkpoint: Option<PathBuf>,

    /// Draw prototypes from this file [default: --data]
    #[arg(long, value_name = "TSV")]
    prototype_data: Option<PathBuf>,

    /// Prototypes per question type [default: 30]
    #[arg(long, value_name = "P")]
    prototypes: Option<usize>,

    #[command(flatten)]
    options: RankOptions,

    /// Score candidates at random instead of by averaged word vectors.
    #[arg(long)]
    random: bool,

    #[arg(long, value_name = "TSV")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,

    /// Questions to draw prototypes from, usually the training file.
    #[arg(long, value_name = "TSV")]
    prototype_data: PathBuf,

    /// Prototype counts to try.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
    p: Vec<usize>,

    #[command(flatten)]
    options: RankOptions,

    /// Output TSV [default: stdout]
    #[arg(long, value_name = "TSV")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,

    /// f32, f64 or both.
    #[arg(long, default_value = "both")]
    precision: PrecisionChoice,
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    /// Directory for train.tsv, test.tsv and vectors.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    train_per_type: usize,
    #[arg(long, default_value_t = 10)]
    test_per_type: usize,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct TypeList(Vec<WhType>);

impl FromStr for TypeList {
    type Err = analogia::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut types = Vec::new();
        for part in s.split(',') {
            let t: WhType = part.parse()?;
            if !types.contains(&t) {
                types.push(t);
            }
        }
        Ok(TypeList(types))
    }
}

impl fmt::Display for TypeList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|t| t.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Clone, Copy, Debug)]
enum PrecisionChoice {
    One(Precision),
    Both,
}

impl FromStr for PrecisionChoice {
    type Err = analogia::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(PrecisionChoice::Both),
            other => other.parse().map(PrecisionChoice::One),
        }
    }
}

/// Marks a gradient check that ran but exceeded its tolerance.
#[derive(Debug)]
struct CheckFailed;

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for CheckFailed {}

/// Flag and config values shared by every subcommand.
struct Ctx {
    settings: Settings,
    seed: u64,
}

impl Ctx {
    fn types(&self, flag: Option<TypeList>) -> Result<Vec<WhType>> {
        let types = self
            .settings
            .or(flag, "types", TypeList(WhType::ANALOGY.to_vec()))?
            .0;
        if types.is_empty() {
            bail!(analogia::Error::Config("no question types selected".into()));
        }
        Ok(types)
    }

    fn prototypes(&self, flag: Option<usize>) -> Result<usize> {
        let p = self.settings.or(flag, "prototypes", 30)?;
        if p == 0 {
            bail!(analogia::Error::Config("--prototypes must be at least 1".into()));
        }
        Ok(p)
    }

    fn eval_options(&self, opts: RankOptions, cosine_epsilon: f64) -> Result<EvalOptions> {
        Ok(EvalOptions {
            mode: self.settings.or(opts.mode, "mode", RankMode::Energy)?,
            cosine_epsilon,
            types: self.types(opts.types)?,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_seed(flag: Option<u64>, settings: &Settings) -> Result<u64> {
    if let Some(s) = settings.get(flag, "seed")? {
        return Ok(s);
    }
    match std::env::var("ANALOGIA_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|e| anyhow!(analogia::Error::Config(format!("ANALOGIA_SEED={v:?}: {e}")))),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &settings)?;
    info!("seed {seed}");
    let ctx = Ctx { settings, seed };
    match cli.command {
        Command::GenQuadruples(args) => gen_quadruples(&ctx, args),
        Command::Train(args) => train_cmd(&ctx, *args),
        Command::Rank(args) => rank_cmd(&ctx, args),
        Command::Eval(args) => eval_cmd(&ctx, args),
        Command::Baseline(args) => baseline_cmd(&ctx, args),
        Command::SweepPrototypes(args) => sweep_cmd(&ctx, args),
        Command::CheckGradients(args) => check_cmd(&ctx, args),
        Command::GenSynthetic(args) => synthetic_cmd(&ctx, args),
    }
}

fn load_data(path: &Path, header: bool) -> Result<QADataset> {
    let ds = load_qa_dataset(path, header)?;
    info!("{}: {} questions, {} candidates", path.display(), ds.len(), ds.candidate_count());
    Ok(ds)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            info!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn gen_quadruples(ctx: &Ctx, args: GenQuadruples) -> Result<()> {
    let p = ctx.prototypes(args.select.prototypes)?;
    let types = ctx.types(args.select.types)?;
    let negatives = ctx.settings.or(args.negatives, "negatives", 1)?;
    let ds = load_data(&args.data.data, args.data.header)?;
    let protos = select_prototypes_for(&ds, p, ctx.seed, &types)?;

    let quads = if args.eval {
        let excluded = protos.source_ids();
        let mut quads = Vec::new();
        let mut skipped = 0;
        for q in ds.questions().iter().filter(|q| types.contains(&q.wh_type)) {
            let eq = generate_eval_quadruples(q, protos.of_type(q.wh_type));
            if eq.skipped || excluded.contains(q.id.as_str()) {
                skipped += 1;
            } else {
                quads.extend(eq.quadruples);
            }
        }
        if skipped > 0 {
            info!("{skipped} questions skipped");
        }
        quads
    } else {
        generate_training_quadruples(&ds, &protos, negatives, ctx.seed)
    };
    info!("{} quadruples from {} prototypes", quads.len(), protos.len());
    write_atomic(&args.out, quadruples_to_tsv(&quads).as_bytes())?;
    if let Some(path) = &args.prototypes_out {
        write_atomic(path, protos.to_tsv().as_bytes())?;
    }
    Ok(())
}

fn train_cmd(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let s = &ctx.settings;
    let defaults = TrainConfig::default();
    let hp = HyperParams::default();
    let config = TrainConfig {
        lr: s.or(args.lr, "lr", defaults.lr)?,
        weight_decay: s.or(args.weight_decay, "weight-decay", defaults.weight_decay)?,
        dropout: s.or(args.dropout, "dropout", defaults.dropout)?,
        epochs: s.or(args.epochs, "epochs", defaults.epochs)?,
        batch_size: s.or(args.batch_size, "batch-size", defaults.batch_size)?,
        seed: ctx.seed,
        dim: s.or(args.dim, "dim", defaults.dim)?,
        negatives_per_positive: s.or(args.negatives, "negatives", defaults.negatives_per_positive)?,
        clip_norm: s.get(args.clip_norm, "clip-norm")?,
        hp: HyperParams {
            margin: s.or(args.margin, "margin", hp.margin)?,
            loss_variant: s.or(args.loss_variant, "loss-variant", hp.loss_variant)?,
            l2_lambda: s.or(args.l2_lambda, "l2-lambda", hp.l2_lambda)?,
            cosine_epsilon: s.or(args.cosine_epsilon, "cosine-epsilon", hp.cosine_epsilon)?,
        },
        dump_dir: Some(sibling(&args.out, "failed")),
    };
    config.validate()?;
    let p = ctx.prototypes(args.select.prototypes)?;
    let types = ctx.types(args.select.types)?;
    Checkpoint::check_target(&args.out)?;

    let ds = load_data(&args.data.data, args.data.header)?;
    let protos = select_prototypes_for(&ds, p, ctx.seed, &types)?;
    let oov_seed = seed::derive(ctx.seed, "oov");
    let mut table = load_embeddings_for(&args.embeddings, None, &ds.vocabulary())?;
    table.set_oov_seed(oov_seed);
    info!("{} word vectors of dimension {}", table.len(), table.dim());

    let outcome = train(&config, &ds, &protos, &table)?;
    Checkpoint {
        config: CheckpointConfig::new(&config, &outcome.params, Some(args.embeddings), oov_seed),
        params: outcome.params,
        prototypes: protos,
        loss_log: outcome.log,
    }
    .save(&args.out)?;
    info!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}"));
    path.with_file_name(name)
}

/// A checkpoint with word vectors for every word of `datasets` and of its
/// prototypes.
fn load_model(args: &ModelArgs, datasets: &[&QADataset]) -> Result<(Checkpoint, EmbeddingTable)> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let path = args
        .embeddings
        .clone()
        .or_else(|| ckpt.config.embeddings.clone())
        .ok_or_else(|| {
            anyhow!(analogia::Error::Config(
                "checkpoint records no word vectors; pass --embeddings".into()
            ))
        })?;
    let mut vocab: HashSet<String> = HashSet::new();
    for ds in datasets {
        vocab.extend(ds.vocabulary());
    }
    for p in ckpt.prototypes.iter() {
        vocab.extend(p.question.iter().chain(p.answer.iter()).map(|t| t.as_str().to_owned()));
    }
    let mut table = load_embeddings_for(&path, Some(ckpt.config.input_dim), &vocab)?;
    table.set_oov_seed(ckpt.config.oov_seed);
    Ok((ckpt, table))
}

fn print_report(eval: &Evaluation, path: Option<&Path>) -> Result<()> {
    if eval.degenerate > 0 {
        warn!("{} degenerate scores", eval.degenerate);
    }
    let tsv = eval.report.to_tsv();
    print!("{tsv}");
    if let Some(p) = path {
        write_atomic(p, tsv.as_bytes())?;
    }
    Ok(())
}

fn rank_cmd(ctx: &Ctx, args: RankArgs) -> Result<()> {
    let ds = load_data(&args.data.data, args.data.header)?;
    let (ckpt, table) = load_model(&args.model, &[&ds])?;
    let opts = ctx.eval_options(args.options, ckpt.config.cosine_epsilon)?;
    let encoder = GruEncoder::new(&ckpt.params, &table)?;
    let (rankings, skipped) = rank_questions(&encoder, &ds, &ckpt.prototypes, &opts)?;
    if skipped > 0 {
        info!("{skipped} questions skipped");
    }
    write_output(args.out.as_deref(), &rankings_to_tsv(&rankings))
}

fn eval_cmd(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let ds = load_data(&args.data.data, args.data.header)?;
    let (ckpt, table) = load_model(&args.model, &[&ds])?;
    let opts = ctx.eval_options(args.options, ckpt.config.cosine_epsilon)?;
    let encoder = GruEncoder::new(&ckpt.params, &table)?;
    let eval = evaluate(&encoder, &ds, &ckpt.prototypes, &opts)?;
    print_report(&eval, args.report.as_deref())
}

fn baseline_cmd(ctx: &Ctx, args: BaselineArgs) -> Result<()> {
    let ds = load_data(&args.data.data, args.data.header)?;
    let (protos, cosine_epsilon) = match &args.checkpoint {
        Some(dir) => {
            let ckpt = Checkpoint::load(dir)
                .with_context(|| format!("loading checkpoint {}", dir.display()))?;
            (ckpt.prototypes, ckpt.config.cosine_epsilon)
        }
        None => {
            let p = ctx.prototypes(args.prototypes)?;
            let types = ctx.types(args.options.types.clone())?;
            let source = match &args.prototype_data {
                Some(path) => load_data(path, args.data.header)?,
                None => ds.clone(),
            };
            let eps = ctx.settings.or(None, "cosine-epsilon", HyperParams::default().cosine_epsilon)?;
            (select_prototypes_for(&source, p, ctx.seed, &types)?, eps)
        }
    };
    let opts = ctx.eval_options(args.options, cosine_epsilon)?;
    let eval = if args.random {
        random_rank(&ds, &protos, ctx.seed, &opts)?
    } else {
        let mut vocab = ds.vocabulary();
        for p in protos.iter() {
            vocab.extend(p.question.iter().chain(p.answer.iter()).map(|t| t.as_str().to_owned()));
        }
        let mut table = load_embeddings_for(&args.embeddings, None, &vocab)?;
        table.set_oov_seed(seed::derive(ctx.seed, "oov"));
        baseline_rank(&ds, &table, &protos, &opts)?
    };
    print_report(&eval, args.report.as_deref())
}

fn sweep_cmd(ctx: &Ctx, args: SweepArgs) -> Result<()> {
    if args.p.contains(&0) {
        bail!(analogia::Error::Config("--p values must be at least 1".into()));
    }
    let ds = load_data(&args.data.data, args.data.header)?;
    let source = load_data(&args.prototype_data, args.data.header)?;
    let (ckpt, table) = load_model(&args.model, &[&ds, &source])?;
    let opts = ctx.eval_options(args.options, ckpt.config.cosine_epsilon)?;
    let encoder = GruEncoder::new(&ckpt.params, &table)?;
    let rows = sweep_prototypes(&encoder, &ds, &source, &args.p, ctx.seed, &opts)?;
    write_output(args.out.as_deref(), &sweep_to_tsv(&rows))
}

fn check_cmd(ctx: &Ctx, args: CheckArgs) -> Result<()> {
    let precisions = match args.precision {
        PrecisionChoice::One(p) => vec![p],
        PrecisionChoice::Both => vec![Precision::Mixed32, Precision::F64],
    };
    let mut ok = true;
    for precision in precisions {
        let report = run_pipeline_suite(args.instances, ctx.seed, precision)?;
        println!(
            "{precision}\tinstances {}\tmax relative error {:.3e}\ttolerance {:.0e}\t{}",
            report.instances,
            report.max_rel_error,
            precision.tolerance(),
            if report.passed() { "ok" } else { "FAILED" }
        );
        if !report.passed() {
            warn!(
                "worst: instance {}, input {}, coordinate {}",
                report.worst_instance, report.worst.worst_input, report.worst.worst_coord
            );
            ok = false;
        }
    }
    if ok {
        Ok(())
    } else {
        Err(CheckFailed.into())
    }
}

fn synthetic_cmd(ctx: &Ctx, args: SyntheticArgs) -> Result<()> {
    let corpus = generate(&SyntheticConfig {
        train_per_type: args.train_per_type,
        test_per_type: args.test_per_type,
        candidates: args.candidates,
        embedding_dim: args.embedding_dim,
        seed: ctx.seed,
    })?;
    corpus.write(&args.out)?;
    info!("synthetic corpus written to {}", args.out.display());
    Ok(())
}
