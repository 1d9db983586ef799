use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eliminet::data::{
    build_vocab, category_report, load_dataset, load_pretrained_embeddings, load_records, synth_generate,
    synth_vocabulary, to_records, tokenize, write_records, Instance, Record, SynthSpec, Vocabulary,
};
use eliminet::gradcheck::{pipeline_gradcheck, GradCheckOptions};
use eliminet::train::{load_checkpoint, procedure_names, save_checkpoint, train, TrainOptions};
use eliminet::{build_model, eval, trace, Error, ErrorClass, ModelConfig};

const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "eliminet", version, about = "Multiple-choice reading comprehension with soft option elimination")]
struct Cli {
    /// Worker threads for evaluation and gradient accumulation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus metrics CSVs.
    Train(TrainArgs),
    /// Report accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Average option probabilities over several checkpoints.
    EnsembleEval(EnsembleArgs),
    /// Per-pass option probabilities for one instance, as CSV and SVG.
    Trace(TraceArgs),
    /// Finite-difference check of the full model at toy size.
    Gradcheck(GradcheckArgs),
    /// Distribution of question categories in a dataset.
    Categorize(CategorizeArgs),
    /// Generate a synthetic cue/answer dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long, default_value = "end_to_end")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Defaults to 1e-3 for adam and 0.1 for sgd.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10.0)]
    clip_norm: f64,
    #[arg(long)]
    no_clip: bool,
    /// Text embeddings (`word v1 ... vd` per line) to initialise word vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also print accuracy for each question category.
    #[arg(long)]
    by_category: bool,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    instance: String,
    /// Output stem; `.csv` and `.svg` files are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Architecture switches are taken from this config; dimensions are toy-sized.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

#[derive(Args)]
struct CategorizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    num: usize,
    #[arg(long, default_value_t = 12)]
    passage_len: usize,
    /// Number of content tokens.
    #[arg(long, default_value_t = 16)]
    vocab_size: usize,
    /// Options per question.
    #[arg(long, default_value_t = 4)]
    options: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

type Result<T> = std::result::Result<T, Failure>;

/// A command failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e }.into())
}

fn vocab_from_passages(records: &[Record], max_size: usize) -> Vocabulary {
    build_vocab(records.iter().flat_map(|r| tokenize(&r.passage)), max_size)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = ModelConfig::from_file(&a.config)?;
    if !procedure_names().contains(&a.mode.as_str()) {
        return Err(usage(format!("unknown --mode {:?} (expected one of {:?})", a.mode, procedure_names())));
    }
    let train_records = load_records(&a.train, Some(config.n_options))?;
    let vocab = vocab_from_passages(&train_records, config.vocab_size);
    config.vocab_size = vocab.len();
    let train_set: Vec<Instance> = train_records.iter().map(|r| Instance::from_record(r, &vocab)).collect();
    let valid_set = load_dataset(&a.valid, &vocab, Some(config.n_options))?;

    let mut opts = TrainOptions {
        optimizer: a.optimizer,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        clip_norm: (!a.no_clip).then_some(a.clip_norm),
        embeddings: None,
    };
    if let Some(path) = &a.embeddings {
        let init = build_model(&config, config.seed)?;
        let mut table = init.params.get(init.embedding_id()).clone();
        let cov = load_pretrained_embeddings(path, &vocab, &mut table)?;
        eprintln!("embeddings: {} of {} words matched ({:.4})", cov.matched, vocab.len(), cov.coverage);
        opts.embeddings = Some(table);
    }

    let outcome = train(&config, &train_set, &valid_set, &a.mode, &opts, &mut |stage, s| {
        eprintln!("{stage} epoch {}: train_loss {:.6} valid_acc {:.4}", s.epoch, s.train_loss, s.valid_acc);
    })?;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let single = outcome.stages.len() == 1;
    for (stage, report) in &outcome.stages {
        let name = if single { "metrics.csv".to_string() } else { format!("metrics_{stage}.csv") };
        write_file(&a.out.join(name), &report.to_csv())?;
        println!(
            "{stage}: best epoch {} valid_acc {:.4} ({:.1}s)",
            report.best_epoch, report.best_valid_acc, report.wall_clock_secs
        );
    }
    let ckpt = a.out.join("model.json");
    save_checkpoint(&outcome.model, &vocab, &ckpt)?;
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data, &vocab, Some(model.config.n_options))?;
    if a.by_category {
        let rows = eval::accuracy_by_category(&model, &data)?;
        let correct: usize = rows.iter().map(|r| r.correct).sum();
        println!("accuracy {} ({correct}/{})", correct as f64 / data.len() as f64, data.len());
        print!("{}", eval::category_csv(&rows));
    } else {
        println!("accuracy {} ({} instances)", eval::accuracy(&model, &data)?, data.len());
    }
    Ok(())
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<()> {
    if a.models.len() < 2 {
        return Err(usage("ensemble-eval needs at least two --models"));
    }
    let records = load_records(&a.data, None)?;
    if records.is_empty() {
        return Err(usage(format!("{}: empty dataset", a.data.display())));
    }
    let mut tables = Vec::with_capacity(a.models.len());
    let mut n_options = None;
    let mut labelled = Vec::new();
    for path in &a.models {
        let (model, vocab) = load_checkpoint(path)?;
        let n = model.config.n_options;
        if *n_options.get_or_insert(n) != n {
            return Err(usage(format!(
                "{}: model expects {n} options, previous models expect {}",
                path.display(),
                n_options.unwrap()
            )));
        }
        let data: Vec<Instance> = records.iter().map(|r| Instance::from_record(r, &vocab)).collect();
        if let Some(bad) = data.iter().find(|i| i.options.len() != n) {
            return Err(usage(format!("instance {} has {} options, models expect {n}", bad.id, bad.options.len())));
        }
        tables.push(eval::probabilities(&model, &data)?);
        labelled = data;
    }
    let probs = eval::average_probabilities(&tables)?;
    let acc = eval::accuracy_from_probabilities(&probs, &labelled)?;
    println!("ensemble of {} models: accuracy {acc} ({} instances)", a.models.len(), labelled.len());
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let data = load_dataset(&a.data, &vocab, Some(model.config.n_options))?;
    let inst = data
        .iter()
        .find(|i| i.id == a.instance)
        .ok_or_else(|| Error::OutOfRange(format!("no instance with id {:?} in {}", a.instance, a.data.display())))?;
    let fwd = model.forward(inst, false, None)?;
    let csv_path = a.out.with_extension("csv");
    let svg_path = a.out.with_extension("svg");
    write_file(&csv_path, &fwd.trace.to_csv())?;
    let svg = trace::trace_svg(&fwd.trace, inst.label, &format!("instance {}", inst.id))?;
    write_file(&svg_path, &svg)?;
    let wrong = trace::top_incorrect(&fwd.trace, inst.label).expect("at least two options");
    for p in &fwd.trace.passes {
        println!(
            "pass {}: correct {:.4} top-incorrect {:.4}",
            p.pass, p.probabilities[inst.label], p.probabilities[wrong]
        );
    }
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let base = match &a.config {
        Some(path) => ModelConfig::from_file(path)?,
        None => ModelConfig::default(),
    };
    let opts = GradCheckOptions { eps: a.eps, inject_error: a.inject_fault };
    let report = pipeline_gradcheck(&base, a.seed, opts)?;
    let err = report.max_rel_error();
    let worst = report.worst_block().map_or("-", |b| b.name.as_str());
    let verdict = if report.passed(GRADCHECK_TOL) { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: max relative error {err:.3e} (tolerance {GRADCHECK_TOL:e}, worst parameter {worst}, {} parameters)",
        report.blocks.len()
    );
    if verdict == "FAIL" {
        return Err(Failure { code: 4, message: format!("gradient check failed: {err:.3e} >= {GRADCHECK_TOL:e}") });
    }
    Ok(())
}

fn cmd_categorize(a: CategorizeArgs) -> Result<()> {
    let records = load_records(&a.data, None)?;
    let counts = category_report(records.iter().map(|r| r.question.as_str()));
    write_file(&a.out, &counts.to_csv())?;
    println!("{} questions categorised into {}", counts.total(), a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.options < 2 {
        return Err(usage("--options must be at least 2"));
    }
    let spec = SynthSpec {
        num_instances: a.num,
        passage_len: a.passage_len,
        vocab_size: a.vocab_size,
        distractor_count: a.options - 1,
        seed: a.seed,
    };
    let data = synth_generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    write_records(&a.out, &to_records(&data, &synth_vocabulary(&spec)))?;
    println!("wrote {} instances to {}", data.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon_threads(cli.threads)?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EnsembleEval(a) => cmd_ensemble(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Categorize(a) => cmd_categorize(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn rayon_threads(n: usize) -> Result<()> {
    eliminet::set_thread_count(n).map_err(|e| usage(format!("--threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
