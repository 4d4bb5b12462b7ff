use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use leafnet::app::{self, EvalOptions, ScheduleKind, TrainConfig};
use leafnet::data::write_fixture;
use leafnet::metrics::{Aggregation, ReportFormat};
use leafnet::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "leafnet", version, about = "Train and run a ResNet9 leaf disease classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, logs and a holdout report.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Rank class probabilities for one image.
    Predict(PredictArgs),
    /// Write the synthetic three-class dataset.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_parser = parse::<ReportFormat>, default_value = "csv")]
    report_format: ReportFormat,
    /// How the overall F1 is aggregated: weighted, macro or micro.
    #[arg(long, value_parser = parse::<Aggregation>, default_value = "weighted")]
    aggregation: Aggregation,
    /// Write CSV reports as class,accuracy,recall,precision,f1,support.
    #[arg(long)]
    table4: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data_dir", "train_dir", "fixture"])))]
struct TrainArgs {
    /// Directory-per-class tree, split into train and holdout.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, requires = "val_dir")]
    train_dir: Option<PathBuf>,
    #[arg(long, requires = "train_dir")]
    val_dir: Option<PathBuf>,
    /// Generate the synthetic dataset into this directory and train on it.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// CSV of directory_name,canonical_name pairs.
    #[arg(long)]
    class_mapping: Option<PathBuf>,
    #[arg(long, default_value = "runs/latest")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.0001)]
    weight_decay: f64,
    /// Apply weight decay to the weights directly (AdamW style).
    #[arg(long)]
    decoupled_weight_decay: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    img_size: usize,
    /// cosine, cosine-epoch or constant.
    #[arg(long, value_parser = parse::<ScheduleKind>, default_value = "cosine")]
    schedule: ScheduleKind,
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    deterministic: bool,
    /// Worker threads (0: one when deterministic, all cores otherwise).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = leafnet::data::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long)]
    save_every: Option<usize>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["data_dir", "manifest"])))]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Manifest CSV (path,class_index,class_name) instead of a directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    class_mapping: Option<PathBuf>,
    /// Where report and confusion matrix files go.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Number of classes to list (default: 5, or all if fewer).
    #[arg(long)]
    top_k: Option<usize>,
    /// Print JSON instead of tab-separated lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    img_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn train(args: TrainArgs) -> Result<()> {
    let data_dir = match &args.fixture {
        Some(dir) => {
            let m = write_fixture(dir, 100, args.img_size, args.seed)?;
            println!("wrote {} fixture images to {}", m.len(), dir.display());
            Some(dir.clone())
        }
        None => args.data_dir,
    };
    let config = TrainConfig {
        data_dir,
        train_dir: args.train_dir,
        val_dir: args.val_dir,
        class_mapping: args.class_mapping,
        out_dir: args.out_dir,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        weight_decay: args.weight_decay,
        decoupled_weight_decay: args.decoupled_weight_decay,
        seed: args.seed,
        img_size: args.img_size,
        schedule: args.schedule,
        deterministic: args.deterministic,
        threads: args.threads,
        train_fraction: args.train_fraction,
        save_every: args.save_every,
        report_format: args.report.report_format,
        aggregation: args.report.aggregation,
        table4_layout: args.report.table4,
        architecture: None,
    };
    let out = app::cmd_train(&config)?;
    for r in &out.epochs {
        println!(
            "epoch {}  loss {:.4}  holdout accuracy {:.4}  lr {:.3e}",
            r.epoch, r.train_loss, r.val_accuracy, r.lr
        );
    }
    println!(
        "final holdout accuracy {:.4} (best {:.4} at epoch {}); artifacts in {}",
        out.final_accuracy,
        out.best_accuracy,
        out.best_epoch,
        out.run_dir.display()
    );
    Ok(())
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let n = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
        .install(f)
}

fn eval(args: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        batch_size: args.batch_size,
        report_format: args.report.report_format,
        aggregation: args.report.aggregation,
        table4_layout: args.report.table4,
        class_mapping: args.class_mapping,
        out_dir: args.out_dir,
    };
    let outcome = with_threads(args.threads, || match (&args.data_dir, &args.manifest) {
        (Some(dir), _) => app::cmd_eval(&args.checkpoint, dir, &opts),
        (None, Some(csv)) => app::cmd_eval_manifest(&args.checkpoint, csv, &opts),
        (None, None) => unreachable!("clap requires an input"),
    })?;
    if !outcome.skipped.is_empty() {
        eprintln!("skipped {} undecodable images", outcome.skipped.len());
    }
    print!("{}", outcome.report.render(opts.report_format, opts.table4_layout)?);
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let ck = checkpoint::load(&args.checkpoint)?;
    let k = args.top_k.unwrap_or_else(|| ck.class_names.len().min(5));
    let ranked = app::predict_image(&ck, &args.image, k)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&ranked)?);
    } else {
        for p in ranked {
            println!("{}\t{:.6}", p.class_name, p.probability);
        }
    }
    Ok(())
}

fn fixture(args: FixtureArgs) -> Result<()> {
    let m = write_fixture(&args.out_dir, args.per_class, args.img_size, args.seed)?;
    println!("wrote {} images in {} classes to {}", m.len(), m.num_classes(), args.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
